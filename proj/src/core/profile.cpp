#include "core/profile.hpp"

namespace dpws {

const VersionProfile& VersionProfile::get(ProfileVersion v) {
  static const VersionProfile k11{
      ProfileVersion::V1_1,
      std::string(ns::kWsa2005),
      std::string(ns::kWsa2005) + "/anonymous",
      std::string(ns::kWsd2009),
      "urn:docs-oasis-open-org:ws-dd:ns:discovery:2009:01",
      std::string(ns::kDpws2009),
  };
  static const VersionProfile k10{
      ProfileVersion::V1_0,
      std::string(ns::kWsa2004),
      std::string(ns::kWsa2004) + "/role/anonymous",
      std::string(ns::kWsd2005),
      "urn:schemas-xmlsoap-org:ws:2005:04:discovery",
      std::string(ns::kDpws2006),
  };
  return v == ProfileVersion::V1_1 ? k11 : k10;
}

const VersionProfile* VersionProfile::from_addressing(std::string_view wsa_ns) {
  if (wsa_ns == ns::kWsa2005) return &v1_1();
  if (wsa_ns == ns::kWsa2004) return &v1_0();
  return nullptr;
}

}  // namespace dpws
