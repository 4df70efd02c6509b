#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpws::xml {

/// Namespace-qualified name. Prefixes never take part in identity.
struct QName {
  std::string ns;
  std::string local;

  QName() = default;
  QName(std::string ns_, std::string local_) : ns(std::move(ns_)), local(std::move(local_)) {}

  bool operator==(const QName&) const = default;
  auto operator<=>(const QName&) const = default;

  /// "{ns}local", or just "local" when the namespace is empty.
  std::string clark() const;
  /// Inverse of clark(); a bare token yields an empty namespace.
  static QName from_clark(std::string_view text);
};

/// True when the token is a legal NCName-ish local part (non-empty, no
/// whitespace, no ':').
bool is_valid_local_name(std::string_view name) noexcept;

struct Attribute {
  QName name;
  std::string value;
  bool operator==(const Attribute&) const = default;
};

class Element {
 public:
  QName name;
  std::vector<Attribute> attributes;
  std::vector<Element> children;
  std::string text;

  Element() = default;
  explicit Element(QName n) : name(std::move(n)) {}
  Element(QName n, std::string t) : name(std::move(n)), text(std::move(t)) {}

  bool operator==(const Element&) const = default;

  Element& add(Element child) {
    children.push_back(std::move(child));
    return children.back();
  }
  Element& add(QName n, std::string t) { return add(Element(std::move(n), std::move(t))); }
  void set_attribute(QName n, std::string value);

  const Element* child(const QName& n) const;
  Element* child(const QName& n);
  std::vector<const Element*> children_named(const QName& n) const;
  const std::string* attribute(const QName& n) const;

  /// Text with leading/trailing XML whitespace removed.
  std::string trimmed_text() const;
};

struct ParseLimits {
  std::size_t max_bytes = 1 << 20;
  std::size_t max_depth = 32;
};

/// Parses the supported XML subset: elements, attributes, character data,
/// CDATA, comments (skipped), the five predefined entities and numeric
/// character references. DTDs, processing instructions (other than a leading
/// XML declaration) and any other entity reference raise MalformedXml.
///
/// Whitespace-only character data inside an element that has child elements
/// is dropped. QName-list elements (see is_qname_list) have their prefixes
/// resolved against the in-scope declarations.
Element parse(std::string_view input, const ParseLimits& limits = {});

struct WriteOptions {
  /// Overrides for namespace -> prefix. Namespaces not listed get their
  /// canonical prefix, or "n0", "n1", ... in document order.
  std::map<std::string, std::string> prefixes;
  /// Namespaces to declare on the root even if no name uses them.
  std::vector<std::string> extra_namespaces;
};

/// Deterministic serializer: every namespace is declared once on the root
/// element, attributes keep insertion order, no insignificant whitespace.
std::string write(const Element& root, const WriteOptions& options = {});

/// Elements whose text is a whitespace-separated list of QNames: SOAP fault
/// code values and discovery/relationship Types. Their in-memory text uses
/// prefix-independent tokens (see qname_token); the parser and writer
/// translate to and from real prefixes.
bool is_qname_list(const QName& name);
/// "prefix:local" for namespaces with a canonical prefix, else Clark form.
std::string qname_token(const QName& q);
QName parse_qname_token(std::string_view token);
std::vector<QName> parse_qname_list(std::string_view text);
std::string join_qname_list(const std::vector<QName>& names);

/// Fixed prefix for a well-known namespace, or nullopt.
std::optional<std::string> canonical_prefix(std::string_view ns);

std::string escape_text(std::string_view text);
std::string escape_attribute(std::string_view text);

}  // namespace dpws::xml
