#include "framr/definitions.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "framr/errors.hpp"

namespace framr::rules {

// ---------------------------------------------------------------------------
// AST helpers

namespace {

constexpr std::uint8_t bit_of(SourceTable s) {
  switch (s) {
    case SourceTable::billing: return 1;
    case SourceTable::health_condition: return 2;
    case SourceTable::encounter_diagnosis: return 4;
    default: return 0;
  }
}

bool children_equal(const std::vector<RuleExpr>& a, const std::vector<RuleExpr>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

SourceSet SourceSet::all_coded() {
  SourceSet s;
  s.insert(SourceTable::billing);
  s.insert(SourceTable::health_condition);
  s.insert(SourceTable::encounter_diagnosis);
  return s;
}

bool SourceSet::is_coded(SourceTable s) { return bit_of(s) != 0; }

void SourceSet::insert(SourceTable s) {
  if (!is_coded(s)) throw std::invalid_argument(std::string(emr::to_string(s)) + " is not a coded-record table");
  bits_ |= bit_of(s);
}

bool SourceSet::contains(SourceTable s) const { return (bits_ & bit_of(s)) != 0; }

std::vector<SourceTable> SourceSet::members() const {
  std::vector<SourceTable> out;
  for (auto s : {SourceTable::billing, SourceTable::health_condition, SourceTable::encounter_diagnosis}) {
    if (contains(s)) out.push_back(s);
  }
  return out;
}

bool AnyOf::operator==(const AnyOf& o) const { return children_equal(children, o.children); }
bool AllOf::operator==(const AllOf& o) const { return children_equal(children, o.children); }
bool Negation::operator==(const Negation& o) const {
  if (!child || !o.child) return child == o.child;
  return *child == *o.child;
}

bool RuleExpr::contains_negation() const {
  return std::visit(
      [](const auto& n) -> bool {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Negation>) {
          return true;
        } else if constexpr (std::is_same_v<T, AnyOf> || std::is_same_v<T, AllOf>) {
          return std::any_of(n.children.begin(), n.children.end(),
                             [](const RuleExpr& c) { return c.contains_negation(); });
        } else {
          return false;
        }
      },
      node);
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { ident, number, string, symbol, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  std::size_t line = 0;
  std::size_t column = 0;
  std::vector<std::string> comments;  // contiguous comment lines directly above
};

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0, line = 1, col = 1;
  std::vector<std::string> comments;
  std::size_t last_comment_line = 0;

  auto advance = [&](std::size_t n = 1) {
    for (std::size_t k = 0; k < n && i < text.size(); ++k) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };

  while (i < text.size()) {
    char c = text[i];
    if (c == '\n' || c == ' ' || c == '\t' || c == '\r') {
      advance();
      continue;
    }
    if (c == '#') {
      std::size_t start = i + 1;
      while (i < text.size() && text[i] != '\n') advance();
      if (!comments.empty() && last_comment_line + 1 != line) comments.clear();
      comments.push_back(trim(text.substr(start, i - start)));
      last_comment_line = line;
      continue;
    }

    Token tok;
    tok.line = line;
    tok.column = col;
    if (!comments.empty() && last_comment_line + 1 == line) tok.comments = std::move(comments);
    comments.clear();

    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = i;
      while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) advance();
      tok.kind = Tok::ident;
      tok.text = std::string(text.substr(start, i - start));
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) advance();
      if (i < text.size() && text[i] == '.') {
        throw ParseError(tok.line, tok.column, "dotted code in rule; use a three-digit ICD-9 root");
      }
      tok.kind = Tok::number;
      tok.text = std::string(text.substr(start, i - start));
    } else if (c == '"') {
      advance();
      std::string s;
      for (;;) {
        if (i >= text.size() || text[i] == '\n') throw ParseError(tok.line, tok.column, "unterminated string");
        char d = text[i];
        if (d == '"') {
          advance();
          break;
        }
        if (d == '\\') {
          advance();
          if (i >= text.size()) throw ParseError(tok.line, tok.column, "unterminated string");
          d = text[i];
          if (d != '"' && d != '\\') throw ParseError(line, col, std::string("unknown escape \\") + d);
        }
        s.push_back(d);
        advance();
      }
      tok.kind = Tok::string;
      tok.text = std::move(s);
    } else if (std::string_view("=[]()|&!,-").find(c) != std::string_view::npos) {
      tok.kind = Tok::symbol;
      tok.text = std::string(1, c);
      advance();
    } else {
      throw ParseError(line, col, std::string("unexpected character '") + c + "'");
    }
    out.push_back(std::move(tok));
  }
  Token end;
  end.kind = Tok::end;
  end.line = line;
  end.column = col;
  out.push_back(end);
  return out;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  std::vector<DefinitionSpec> file() {
    std::vector<DefinitionSpec> defs;
    std::set<std::string> seen;
    while (peek().kind != Tok::end) {
      const Token& kw = next();
      if (kw.kind != Tok::ident || kw.text != "def") fail(kw, "expected 'def'");
      DefinitionSpec def;
      for (std::size_t k = 0; k < kw.comments.size(); ++k) {
        def.description += (k ? "\n" : "") + kw.comments[k];
      }
      const Token& name = next();
      if (name.kind != Tok::ident) fail(name, "expected definition name");
      if (!seen.insert(name.text).second) fail(name, "duplicate definition name '" + name.text + "'");
      def.name = name.text;
      expect_symbol("=");
      def.expr = any_of();
      defs.push_back(std::move(def));
    }
    return defs;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (t.kind != Tok::end) ++pos_;
    return t;
  }
  bool at_symbol(std::string_view s) const { return peek().kind == Tok::symbol && peek().text == s; }
  bool at_ident(std::string_view s) const { return peek().kind == Tok::ident && peek().text == s; }

  [[noreturn]] static void fail(const Token& t, const std::string& msg) {
    throw ParseError(t.line, t.column, msg + (t.kind == Tok::end ? " (at end of input)" : ", found '" + t.text + "'"));
  }

  void expect_symbol(std::string_view s) {
    if (!at_symbol(s)) fail(peek(), "expected '" + std::string(s) + "'");
    next();
  }

  RuleExpr any_of() {
    std::vector<RuleExpr> items;
    items.push_back(all_of());
    while (at_symbol("|")) {
      next();
      items.push_back(all_of());
    }
    if (items.size() == 1) return std::move(items.front());
    return RuleExpr{AnyOf{std::move(items)}};
  }

  RuleExpr all_of() {
    std::vector<RuleExpr> items;
    items.push_back(unary());
    while (at_symbol("&")) {
      next();
      items.push_back(unary());
    }
    if (items.size() == 1) return std::move(items.front());
    return RuleExpr{AllOf{std::move(items)}};
  }

  RuleExpr unary() {
    if (at_symbol("!")) {
      next();
      return RuleExpr{Negation{std::make_shared<const RuleExpr>(unary())}};
    }
    return primary();
  }

  RuleExpr primary() {
    if (at_symbol("(")) {
      next();
      RuleExpr e = any_of();
      expect_symbol(")");
      return e;
    }
    const Token& t = peek();
    if (t.kind == Tok::ident) {
      if (t.text == "icd9") return icd9();
      if (t.text == "term") return term();
      if (t.text == "med") return med();
    }
    fail(t, "expected icd9[...], term(...), med(...), '!' or '('");
  }

  RuleExpr icd9() {
    next();
    expect_symbol("[");
    struct Item {
      Token tok;
      int low, high;
      bool range;
    };
    std::vector<Item> items;
    for (;;) {
      const Token& lo = next();
      if (lo.kind != Tok::number || lo.text.size() != 3) fail(lo, "expected a three-digit ICD-9 root");
      Item item{lo, std::stoi(lo.text), 0, false};
      if (at_symbol("-")) {
        next();
        const Token& hi = next();
        if (hi.kind != Tok::number || hi.text.empty() || hi.text.size() > 3) fail(hi, "expected range end");
        // Short form "820-29" reuses the leading digits of the low root.
        std::string full = lo.text.substr(0, 3 - hi.text.size()) + hi.text;
        item.high = std::stoi(full);
        item.range = true;
        if (item.low > item.high) {
          throw ParseError(lo.line, lo.column,
                           "inverted range " + lo.text + "-" + hi.text + " (low root exceeds high root)");
        }
      }
      items.push_back(item);
      if (at_symbol("|")) {
        next();
        continue;
      }
      break;
    }
    expect_symbol("]");
    SourceSet sources = SourceSet::all_coded();
    if (at_ident("in")) {
      next();
      sources = source_list();
    }
    std::vector<RuleExpr> atoms;
    for (const auto& it : items) {
      if (it.range) {
        atoms.push_back(RuleExpr{CodeRange{it.low, it.high, sources}});
      } else {
        atoms.push_back(RuleExpr{CodeExact{it.tok.text, sources}});
      }
    }
    if (atoms.size() == 1) return std::move(atoms.front());
    return RuleExpr{AnyOf{std::move(atoms)}};
  }

  SourceTable table_name() {
    const Token& t = next();
    if (t.kind != Tok::ident) fail(t, "expected table name");
    auto s = emr::source_from_string(t.text);
    if (!s) fail(t, "unknown table");
    last_table_tok_ = t;
    return *s;
  }

  SourceSet source_list() {
    SourceSet set;
    auto add = [&] {
      SourceTable s = table_name();
      if (!SourceSet::is_coded(s)) {
        fail(last_table_tok_, "icd9 sources must be billing, health_condition or encounter_diagnosis");
      }
      set.insert(s);
    };
    if (at_symbol("(")) {
      next();
      add();
      while (at_symbol(",")) {
        next();
        add();
      }
      expect_symbol(")");
    } else {
      add();
    }
    return set;
  }

  RuleExpr term() {
    next();
    expect_symbol("(");
    const Token& s = next();
    if (s.kind != Tok::string || trim(s.text).empty()) fail(s, "expected a non-empty quoted term");
    expect_symbol(")");
    TermMatch m{s.text, SourceTable::risk_factor};
    if (at_ident("in")) {
      next();
      m.table = table_name();
      if (m.table != SourceTable::risk_factor && m.table != SourceTable::health_condition) {
        fail(last_table_tok_, "term() applies to risk_factor or health_condition");
      }
    }
    return RuleExpr{std::move(m)};
  }

  RuleExpr med() {
    next();
    expect_symbol("(");
    MedicationAny m;
    for (;;) {
      const Token& s = next();
      if (s.kind != Tok::string || trim(s.text).empty()) fail(s, "expected a quoted drug name");
      m.names.push_back(s.text);
      if (at_symbol(",")) {
        next();
        continue;
      }
      break;
    }
    expect_symbol(")");
    return RuleExpr{std::move(m)};
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  Token last_table_tok_;
};

// ---------------------------------------------------------------------------
// Printer

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_sources(const SourceSet& s) {
  std::string out = " in (";
  bool first = true;
  for (auto t : s.members()) {
    if (!first) out += ", ";
    out += emr::to_string(t);
    first = false;
  }
  return out + ")";
}

std::string code_item(const RuleExpr& e) {
  if (const auto* r = std::get_if<CodeRange>(&e.node)) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d-%03d", r->low, r->high);
    return buf;
  }
  return std::get<CodeExact>(e.node).root;
}

const SourceSet* code_sources(const RuleExpr& e) {
  if (const auto* r = std::get_if<CodeRange>(&e.node)) return &r->sources;
  if (const auto* x = std::get_if<CodeExact>(&e.node)) return &x->sources;
  return nullptr;
}

std::string format_expr(const RuleExpr& e, bool nested);

std::string join(const std::vector<RuleExpr>& children, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (i) out += sep;
    out += format_expr(children[i], true);
  }
  return out;
}

std::string format_expr(const RuleExpr& e, bool nested) {
  return std::visit(
      [&](const auto& n) -> std::string {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, CodeRange> || std::is_same_v<T, CodeExact>) {
          return "icd9[" + code_item(e) + "]" + format_sources(n.sources);
        } else if constexpr (std::is_same_v<T, TermMatch>) {
          return "term(" + quote(n.text) + ") in " + std::string(emr::to_string(n.table));
        } else if constexpr (std::is_same_v<T, MedicationAny>) {
          std::string out = "med(";
          for (std::size_t i = 0; i < n.names.size(); ++i) out += (i ? ", " : "") + quote(n.names[i]);
          return out + ")";
        } else if constexpr (std::is_same_v<T, AnyOf>) {
          // Code atoms sharing a source set print as one bracket list.
          const SourceSet* shared = n.children.size() > 1 ? code_sources(n.children.front()) : nullptr;
          for (const auto& c : n.children) {
            const SourceSet* s = code_sources(c);
            if (!s || !shared || !(*s == *shared)) {
              shared = nullptr;
              break;
            }
          }
          if (shared) {
            std::string items;
            for (std::size_t i = 0; i < n.children.size(); ++i) items += (i ? " | " : "") + code_item(n.children[i]);
            return "icd9[" + items + "]" + format_sources(*shared);
          }
          auto body = join(n.children, " | ");
          return nested ? "(" + body + ")" : body;
        } else if constexpr (std::is_same_v<T, AllOf>) {
          auto body = join(n.children, " & ");
          return nested ? "(" + body + ")" : body;
        } else {
          return "!" + format_expr(*n.child, true);
        }
      },
      e.node);
}

// ---------------------------------------------------------------------------
// Evaluation

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct EvalContext {
  const emr::EmrStore& store;
  const emr::PatientIndex& ix;
  const Interval& interval;
};

void finish_atom(EvalResult& r) {
  std::sort(r.matching_records.begin(), r.matching_records.end(),
            [](const RecordRef& a, const RecordRef& b) {
              return std::tie(a.date, a.source, a.row) < std::tie(b.date, b.source, b.row);
            });
  r.matched = !r.matching_records.empty();
  if (r.matched) r.first_match_date = r.matching_records.front().date;
}

template <typename Pred>
EvalResult eval_codes(const EvalContext& ctx, const SourceSet& sources, Pred root_matches) {
  EvalResult r;
  const auto& coded = ctx.store.tables().coded;
  for (auto i : ctx.ix.coded) {
    const auto& rec = coded[i];
    if (!sources.contains(rec.source) || !ctx.interval.contains(rec.date)) continue;
    auto root = code_root(rec.code);
    if (!root) {
      ++r.unparseable_codes;
      continue;
    }
    if (root_matches(*root)) r.matching_records.push_back({rec.source, i, rec.date});
  }
  finish_atom(r);
  return r;
}

void merge_records(EvalResult& into, const EvalResult& from) {
  into.matching_records.insert(into.matching_records.end(), from.matching_records.begin(),
                               from.matching_records.end());
}

void normalize_records(EvalResult& r) {
  std::sort(r.matching_records.begin(), r.matching_records.end(),
            [](const RecordRef& a, const RecordRef& b) {
              return std::tie(a.date, a.source, a.row) < std::tie(b.date, b.source, b.row);
            });
  r.matching_records.erase(std::unique(r.matching_records.begin(), r.matching_records.end()),
                           r.matching_records.end());
}

EvalResult eval(const RuleExpr& e, const EvalContext& ctx) {
  return std::visit(
      [&](const auto& n) -> EvalResult {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, CodeRange>) {
          return eval_codes(ctx, n.sources, [&](int root) { return root >= n.low && root <= n.high; });
        } else if constexpr (std::is_same_v<T, CodeExact>) {
          int target = std::stoi(n.root);
          return eval_codes(ctx, n.sources, [&](int root) { return root == target; });
        } else if constexpr (std::is_same_v<T, TermMatch>) {
          EvalResult r;
          auto needle = lower(n.text);
          if (n.table == SourceTable::risk_factor) {
            const auto& rows = ctx.store.tables().risk_factors;
            for (auto i : ctx.ix.risk_factors) {
              if (ctx.interval.contains(rows[i].date) && lower(rows[i].term).find(needle) != std::string::npos) {
                r.matching_records.push_back({SourceTable::risk_factor, i, rows[i].date});
              }
            }
          } else {
            const auto& rows = ctx.store.tables().coded;
            for (auto i : ctx.ix.coded) {
              if (rows[i].source == SourceTable::health_condition && ctx.interval.contains(rows[i].date) &&
                  lower(rows[i].code).find(needle) != std::string::npos) {
                r.matching_records.push_back({SourceTable::health_condition, i, rows[i].date});
              }
            }
          }
          finish_atom(r);
          return r;
        } else if constexpr (std::is_same_v<T, MedicationAny>) {
          EvalResult r;
          std::vector<std::string> names;
          for (const auto& name : n.names) names.push_back(lower(name));
          const auto& rows = ctx.store.tables().medications;
          for (auto i : ctx.ix.medications) {
            if (!ctx.interval.contains(rows[i].date)) continue;
            if (std::find(names.begin(), names.end(), lower(rows[i].drug_name)) != names.end()) {
              r.matching_records.push_back({SourceTable::medication, i, rows[i].date});
            }
          }
          finish_atom(r);
          return r;
        } else if constexpr (std::is_same_v<T, AnyOf>) {
          EvalResult r;
          for (const auto& c : n.children) {
            auto sub = eval(c, ctx);
            r.unparseable_codes += sub.unparseable_codes;
            if (!sub.matched) continue;
            r.matched = true;
            if (sub.first_match_date && (!r.first_match_date || *sub.first_match_date < *r.first_match_date)) {
              r.first_match_date = sub.first_match_date;
            }
            merge_records(r, sub);
          }
          normalize_records(r);
          return r;
        } else if constexpr (std::is_same_v<T, AllOf>) {
          EvalResult r;
          r.matched = true;
          std::optional<Date> latest_first;
          std::vector<EvalResult> subs;
          for (const auto& c : n.children) {
            auto sub = eval(c, ctx);
            r.unparseable_codes += sub.unparseable_codes;
            if (!sub.matched) r.matched = false;
            if (sub.first_match_date && (!latest_first || *sub.first_match_date > *latest_first)) {
              latest_first = sub.first_match_date;
            }
            subs.push_back(std::move(sub));
          }
          if (r.matched) {
            // Undated children (negations) hold over the whole interval.
            r.first_match_date = latest_first;
            for (const auto& s : subs) merge_records(r, s);
            normalize_records(r);
          }
          return r;
        } else {
          auto sub = eval(*n.child, ctx);
          EvalResult r;
          r.unparseable_codes = sub.unparseable_codes;
          r.matched = !sub.matched;
          return r;
        }
      },
      e.node);
}

}  // namespace

std::vector<DefinitionSpec> parse_definitions(std::string_view text) {
  Parser p(lex(text));
  return p.file();
}

std::string format(const RuleExpr& expr) { return format_expr(expr, false); }

std::string format(const DefinitionSpec& def) {
  std::string out;
  if (!def.description.empty()) {
    std::istringstream in(def.description);
    std::string line;
    while (std::getline(in, line)) out += "# " + line + "\n";
  }
  return out + "def " + def.name + " = " + format(def.expr) + "\n";
}

std::string format(const std::vector<DefinitionSpec>& defs) {
  std::string out;
  for (std::size_t i = 0; i < defs.size(); ++i) {
    if (i) out += "\n";
    out += format(defs[i]);
  }
  return out;
}

DefinitionSet::DefinitionSet(std::vector<DefinitionSpec> defs) : defs_(std::move(defs)) {
  for (std::size_t i = 0; i < defs_.size(); ++i) {
    if (!by_name_.emplace(defs_[i].name, i).second) {
      throw ConfigError("duplicate definition name '" + defs_[i].name + "'");
    }
  }
}

bool DefinitionSet::contains(std::string_view name) const { return by_name_.find(name) != by_name_.end(); }

const DefinitionSpec& DefinitionSet::at(std::string_view name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("unknown definition '" + std::string(name) + "'");
  return defs_[it->second];
}

std::optional<int> code_root(std::string_view code) {
  auto root = code.substr(0, code.find('.'));
  if (root.size() != 3) return std::nullopt;
  for (char c : root) {
    if (c < '0' || c > '9') return std::nullopt;
  }
  return (root[0] - '0') * 100 + (root[1] - '0') * 10 + (root[2] - '0');
}

EvalResult evaluate(const RuleExpr& expr, const emr::EmrStore& store, std::string_view patient_id,
                    const Interval& interval) {
  EvalContext ctx{store, store.patient(patient_id), interval};
  return eval(expr, ctx);
}

EvalResult evaluate(const DefinitionSpec& def, const emr::EmrStore& store, std::string_view patient_id,
                    const Interval& interval) {
  return evaluate(def.expr, store, patient_id, interval);
}

std::string_view default_definitions_text() {
  static constexpr std::string_view text = R"(# Fracture of lower limb (820-829), sprain or strain of hip and thigh (843),
# sprain or strain of knee and leg (844), crushing injury to lower limb (928).
def leg_injury = icd9[820-829 | 843 | 844 | 928] in (billing, health_condition, encounter_diagnosis)

# Osteoporosis and other bone disorders: ICD-9 733, the free-text term, or a
# bisphosphonate commonly prescribed for it.
def osteoporosis = icd9[733] in (billing, health_condition, encounter_diagnosis) | term("osteoporosis") in risk_factor | med("alendronic acid", "risedronic acid", "ibandronic acid")

# NON-VALIDATED placeholder outcome definition (ICD-9 715, osteoarthrosis).
# Replace with a validated case definition before any real analysis.
def osteoarthritis = icd9[715] in (billing, health_condition, encounter_diagnosis)

# Chronic conditions counted as an imputation auxiliary.
def diabetes = icd9[250]

def hypertension = icd9[401-405]

def copd = icd9[490-496]

def heart_failure = icd9[428]

def depression = icd9[311]
)";
  return text;
}

}  // namespace framr::rules
