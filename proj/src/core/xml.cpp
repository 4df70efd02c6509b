#include "core/xml.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "core/error.hpp"
#include "core/profile.hpp"

namespace dpws::xml {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool is_name_char(char c) {
  return !(is_space(c) || c == '/' || c == '>' || c == '=' || c == '<' || c == '"' ||
           c == '\'' || c == '&' || c == '\0');
}

bool all_space(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Structural UTF-8 check; also rejects C0 controls other than TAB/LF/CR.
bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      if (c < 0x20 && c != '\t' && c != '\n' && c != '\r') return false;
      ++i;
      continue;
    }
    int extra = 0;
    std::uint32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += extra + 1;
  }
  return true;
}

[[noreturn]] void malformed(const std::string& why, std::size_t pos) {
  fail(ErrorCode::MalformedXml, "malformed XML at offset " + std::to_string(pos) + ": " + why);
}

struct Binding {
  std::string prefix;
  std::string uri;
};

class Parser {
 public:
  Parser(std::string_view in, const ParseLimits& limits) : in_(in), limits_(limits) {}

  Element run() {
    if (in_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
    if (in_.substr(pos_, 5) == "<?xml" && pos_ + 5 < in_.size() && is_space(in_[pos_ + 5])) {
      auto end = in_.find("?>", pos_);
      if (end == std::string_view::npos) malformed("unterminated XML declaration", pos_);
      pos_ = end + 2;
    }
    skip_misc();
    if (pos_ >= in_.size() || in_[pos_] != '<') malformed("expected root element", pos_);
    bindings_.push_back({"xml", std::string(ns::kXml)});
    Element root = parse_element(1);
    skip_misc();
    if (pos_ != in_.size()) malformed("content after root element", pos_);
    return root;
  }

 private:
  std::string_view in_;
  ParseLimits limits_;
  std::size_t pos_ = 0;
  std::vector<Binding> bindings_;

  bool starts_with(std::string_view s) const { return in_.substr(pos_, s.size()) == s; }

  void skip_ws() {
    while (pos_ < in_.size() && is_space(in_[pos_])) ++pos_;
  }

  // Whitespace and comments outside the root element.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<!--")) {
        skip_comment();
      } else if (starts_with("<!")) {
        malformed("DTD or declaration not allowed", pos_);
      } else if (starts_with("<?")) {
        malformed("processing instruction not allowed", pos_);
      } else {
        return;
      }
    }
  }

  void skip_comment() {
    auto end = in_.find("-->", pos_ + 4);
    if (end == std::string_view::npos) malformed("unterminated comment", pos_);
    pos_ = end + 3;
  }

  std::string_view read_name() {
    auto start = pos_;
    while (pos_ < in_.size() && is_name_char(in_[pos_])) ++pos_;
    if (start == pos_) malformed("expected name", pos_);
    auto name = in_.substr(start, pos_ - start);
    auto colon = name.find(':');
    if (colon != std::string_view::npos &&
        (colon == 0 || colon + 1 == name.size() || name.find(':', colon + 1) != std::string_view::npos))
      malformed("bad qualified name '" + std::string(name) + "'", start);
    return name;
  }

  void decode_entity(std::string& out) {
    auto start = pos_;
    auto semi = in_.find(';', pos_);
    if (semi == std::string_view::npos || semi - pos_ > 12) malformed("bad entity reference", start);
    auto ref = in_.substr(pos_ + 1, semi - pos_ - 1);
    pos_ = semi + 1;
    if (ref == "lt") out.push_back('<');
    else if (ref == "gt") out.push_back('>');
    else if (ref == "amp") out.push_back('&');
    else if (ref == "quot") out.push_back('"');
    else if (ref == "apos") out.push_back('\'');
    else if (ref.size() > 1 && ref[0] == '#') {
      std::uint32_t cp = 0;
      std::from_chars_result r{};
      if (ref[1] == 'x')
        r = std::from_chars(ref.data() + 2, ref.data() + ref.size(), cp, 16);
      else
        r = std::from_chars(ref.data() + 1, ref.data() + ref.size(), cp, 10);
      if (r.ec != std::errc{} || r.ptr != ref.data() + ref.size() || cp == 0 || cp > 0x10FFFF ||
          (cp >= 0xD800 && cp <= 0xDFFF) || (cp < 0x20 && cp != '\t' && cp != '\n' && cp != '\r'))
        malformed("bad character reference", start);
      append_utf8(out, cp);
    } else {
      malformed("undefined entity '&" + std::string(ref) + ";'", start);
    }
  }

  std::string read_attr_value() {
    if (pos_ >= in_.size() || (in_[pos_] != '"' && in_[pos_] != '\'')) malformed("expected quote", pos_);
    char quote = in_[pos_++];
    std::string value;
    while (pos_ < in_.size() && in_[pos_] != quote) {
      char c = in_[pos_];
      if (c == '<') malformed("'<' in attribute value", pos_);
      if (c == '&') {
        decode_entity(value);
      } else {
        value.push_back(c);
        ++pos_;
      }
    }
    if (pos_ >= in_.size()) malformed("unterminated attribute value", pos_);
    ++pos_;
    return value;
  }

  std::string resolve(std::string_view prefix, std::size_t at) const {
    for (auto it = bindings_.rbegin(); it != bindings_.rend(); ++it)
      if (it->prefix == prefix) return it->uri;
    if (prefix.empty()) return {};
    malformed("undeclared prefix '" + std::string(prefix) + "'", at);
  }

  QName resolve_name(std::string_view raw, bool is_attribute, std::size_t at) const {
    auto colon = raw.find(':');
    if (colon == std::string_view::npos)
      return QName(is_attribute ? std::string() : resolve("", at), std::string(raw));
    return QName(resolve(raw.substr(0, colon), at), std::string(raw.substr(colon + 1)));
  }

  // QName-list text (fault codes, discovery/relationship types) rewritten
  // to prefix-independent tokens.
  std::string canonical_qname_list(const std::string& text, std::size_t at) const {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      auto start = i;
      while (i < text.size() && !is_space(text[i])) ++i;
      if (start == i) break;
      auto t = std::string_view(text).substr(start, i - start);
      auto colon = t.find(':');
      std::string uri = resolve(colon == std::string_view::npos ? "" : t.substr(0, colon), at);
      std::string local(colon == std::string_view::npos ? t : t.substr(colon + 1));
      if (!out.empty()) out.push_back(' ');
      out += qname_token(QName(std::move(uri), std::move(local)));
    }
    return out;
  }

  Element parse_element(std::size_t depth) {
    if (depth > limits_.max_depth) malformed("nesting deeper than " + std::to_string(limits_.max_depth), pos_);
    auto start = pos_;
    ++pos_;  // '<'
    auto raw_name = read_name();
    auto scope_mark = bindings_.size();

    std::vector<std::pair<std::string_view, std::string>> raw_attrs;
    bool empty = false;
    for (;;) {
      bool had_space = pos_ < in_.size() && is_space(in_[pos_]);
      skip_ws();
      if (pos_ >= in_.size()) malformed("unterminated start tag", start);
      if (in_[pos_] == '>') {
        ++pos_;
        break;
      }
      if (starts_with("/>")) {
        pos_ += 2;
        empty = true;
        break;
      }
      if (!had_space) malformed("expected whitespace before attribute", pos_);
      auto attr_at = pos_;
      auto an = read_name();
      skip_ws();
      if (pos_ >= in_.size() || in_[pos_] != '=') malformed("expected '='", pos_);
      ++pos_;
      skip_ws();
      auto value = read_attr_value();
      if (an == "xmlns") {
        bindings_.push_back({"", value});
      } else if (an.substr(0, 6) == "xmlns:") {
        if (value.empty()) malformed("empty namespace binding", attr_at);
        bindings_.push_back({std::string(an.substr(6)), value});
      } else {
        raw_attrs.emplace_back(an, std::move(value));
      }
    }

    Element el(resolve_name(raw_name, false, start));
    for (auto& [an, value] : raw_attrs) {
      QName q = resolve_name(an, true, start);
      if (el.attribute(q)) malformed("duplicate attribute '" + std::string(an) + "'", start);
      el.attributes.push_back({std::move(q), std::move(value)});
    }

    if (!empty) {
      for (;;) {
        if (pos_ >= in_.size()) malformed("unterminated element '" + std::string(raw_name) + "'", start);
        char c = in_[pos_];
        if (c == '<') {
          if (starts_with("</")) {
            pos_ += 2;
            auto close = read_name();
            skip_ws();
            if (pos_ >= in_.size() || in_[pos_] != '>') malformed("bad end tag", pos_);
            ++pos_;
            if (close != raw_name)
              malformed("mismatched end tag '" + std::string(close) + "' for '" + std::string(raw_name) + "'", pos_);
            break;
          }
          if (starts_with("<!--")) {
            skip_comment();
          } else if (starts_with("<![CDATA[")) {
            auto end = in_.find("]]>", pos_ + 9);
            if (end == std::string_view::npos) malformed("unterminated CDATA", pos_);
            el.text.append(in_.substr(pos_ + 9, end - pos_ - 9));
            pos_ = end + 3;
          } else if (starts_with("<!")) {
            malformed("DTD or declaration not allowed", pos_);
          } else if (starts_with("<?")) {
            malformed("processing instruction not allowed", pos_);
          } else {
            el.children.push_back(parse_element(depth + 1));
          }
        } else if (c == '&') {
          decode_entity(el.text);
        } else {
          el.text.push_back(c);
          ++pos_;
        }
      }
    }

    if (!el.children.empty() && all_space(el.text)) el.text.clear();
    if (is_qname_list(el.name)) el.text = canonical_qname_list(el.text, start);
    bindings_.resize(scope_mark);
    return el;
  }
};

struct PrefixTable {
  std::map<std::string, std::string> by_ns;
  std::vector<std::string> order;
  std::set<std::string> used;
  const WriteOptions* options;
  int next = 0;

  void add(const std::string& uri) {
    if (uri.empty() || uri == ns::kXml || by_ns.count(uri)) return;
    std::string prefix;
    if (auto it = options->prefixes.find(uri); it != options->prefixes.end()) {
      prefix = it->second;
    } else if (auto cp = canonical_prefix(uri); cp && !used.count(*cp)) {
      prefix = *cp;
    } else {
      do prefix = "n" + std::to_string(next++);
      while (used.count(prefix));
    }
    used.insert(prefix);
    by_ns.emplace(uri, prefix);
    order.push_back(uri);
  }

  std::string qualify(const QName& q) const {
    if (q.ns.empty()) return q.local;
    if (q.ns == ns::kXml) return "xml:" + q.local;
    return by_ns.at(q.ns) + ":" + q.local;
  }
};

void collect(const Element& el, PrefixTable& table) {
  table.add(el.name.ns);
  for (const auto& a : el.attributes) table.add(a.name.ns);
  if (is_qname_list(el.name))
    for (const auto& q : parse_qname_list(el.text)) table.add(q.ns);
  for (const auto& c : el.children) collect(c, table);
}

void emit(const Element& el, const PrefixTable& table, std::string& out, bool root) {
  auto tag = table.qualify(el.name);
  out += '<';
  out += tag;
  if (root) {
    for (const auto& uri : table.order) {
      out += " xmlns:";
      out += table.by_ns.at(uri);
      out += "=\"";
      out += escape_attribute(uri);
      out += '"';
    }
  }
  for (const auto& a : el.attributes) {
    out += ' ';
    out += table.qualify(a.name);
    out += "=\"";
    out += escape_attribute(a.value);
    out += '"';
  }
  if (el.children.empty() && el.text.empty()) {
    out += "/>";
    return;
  }
  out += '>';
  if (is_qname_list(el.name)) {
    std::string joined;
    for (const auto& q : parse_qname_list(el.text)) {
      if (!joined.empty()) joined.push_back(' ');
      joined += table.qualify(q);
    }
    out += escape_text(joined);
  } else {
    out += escape_text(el.text);
  }
  for (const auto& c : el.children) emit(c, table, out, false);
  out += "</";
  out += tag;
  out += '>';
}

}  // namespace

std::string QName::clark() const {
  if (ns.empty()) return local;
  return "{" + ns + "}" + local;
}

QName QName::from_clark(std::string_view text) {
  if (!text.empty() && text.front() == '{') {
    auto close = text.find('}');
    if (close != std::string_view::npos)
      return QName(std::string(text.substr(1, close - 1)), std::string(text.substr(close + 1)));
  }
  return QName({}, std::string(text));
}

bool is_qname_list(const QName& name) {
  if (name.ns == ns::kSoap) return name.local == "Value";
  if (name.local != "Types") return false;
  return name.ns == ns::kWsd2009 || name.ns == ns::kWsd2005 || name.ns == ns::kDpws2009 || name.ns == ns::kDpws2006;
}

std::string qname_token(const QName& q) {
  if (q.ns.empty()) return q.local;
  if (auto p = canonical_prefix(q.ns)) return *p + ":" + q.local;
  return q.clark();
}

QName parse_qname_token(std::string_view token) {
  if (!token.empty() && token.front() == '{') return QName::from_clark(token);
  auto colon = token.find(':');
  if (colon == std::string_view::npos) return QName({}, std::string(token));
  auto prefix = token.substr(0, colon);
  for (auto uri : {ns::kSoap, ns::kWsa2005, ns::kWsa2004, ns::kWsd2009, ns::kWsd2005, ns::kDpws2009,
                   ns::kDpws2006, ns::kMex, ns::kTransfer, ns::kEventing, ns::kXsi, ns::kExt}) {
    if (canonical_prefix(uri) == prefix) return QName(std::string(uri), std::string(token.substr(colon + 1)));
  }
  return QName({}, std::string(token));
}

std::vector<QName> parse_qname_list(std::string_view text) {
  std::vector<QName> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    auto start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (start != i) out.push_back(parse_qname_token(text.substr(start, i - start)));
  }
  return out;
}

std::string join_qname_list(const std::vector<QName>& names) {
  std::string out;
  for (const auto& q : names) {
    if (!out.empty()) out.push_back(' ');
    out += qname_token(q);
  }
  return out;
}

bool is_valid_local_name(std::string_view name) noexcept {
  if (name.empty()) return false;
  return std::none_of(name.begin(), name.end(), [](char c) { return is_space(c) || c == ':' || !is_name_char(c); });
}

void Element::set_attribute(QName n, std::string value) {
  for (auto& a : attributes) {
    if (a.name == n) {
      a.value = std::move(value);
      return;
    }
  }
  attributes.push_back({std::move(n), std::move(value)});
}

const Element* Element::child(const QName& n) const {
  for (const auto& c : children)
    if (c.name == n) return &c;
  return nullptr;
}

Element* Element::child(const QName& n) {
  for (auto& c : children)
    if (c.name == n) return &c;
  return nullptr;
}

std::vector<const Element*> Element::children_named(const QName& n) const {
  std::vector<const Element*> out;
  for (const auto& c : children)
    if (c.name == n) out.push_back(&c);
  return out;
}

const std::string* Element::attribute(const QName& n) const {
  for (const auto& a : attributes)
    if (a.name == n) return &a.value;
  return nullptr;
}

std::string Element::trimmed_text() const {
  auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = text.find_last_not_of(" \t\r\n");
  return text.substr(b, e - b + 1);
}

Element parse(std::string_view input, const ParseLimits& limits) {
  if (input.size() > limits.max_bytes)
    fail(ErrorCode::Oversize, "document of " + std::to_string(input.size()) + " octets exceeds limit of " +
                                  std::to_string(limits.max_bytes));
  if (!valid_utf8(input)) fail(ErrorCode::MalformedXml, "input is not valid UTF-8 XML text");
  return Parser(input, limits).run();
}

std::string write(const Element& root, const WriteOptions& options) {
  PrefixTable table;
  table.options = &options;
  for (const auto& [uri, prefix] : options.prefixes) table.used.insert(prefix);
  collect(root, table);
  for (const auto& uri : options.extra_namespaces) table.add(uri);
  std::string out;
  out.reserve(512);
  emit(root, table, out, true);
  return out;
}

std::optional<std::string> canonical_prefix(std::string_view uri) {
  if (uri == ns::kSoap) return "s";
  if (uri == ns::kWsa2005) return "a";
  if (uri == ns::kWsa2004) return "wsa";
  if (uri == ns::kWsd2009) return "d";
  if (uri == ns::kWsd2005) return "wsd";
  if (uri == ns::kDpws2009) return "dpws";
  if (uri == ns::kDpws2006) return "devprof";
  if (uri == ns::kMex) return "mex";
  if (uri == ns::kTransfer) return "wxf";
  if (uri == ns::kEventing) return "wse";
  if (uri == ns::kXsi) return "xsi";
  if (uri == ns::kExt) return "x";
  return std::nullopt;
}

std::string escape_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '\r': out += "&#13;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string escape_attribute(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\t': out += "&#9;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace dpws::xml
