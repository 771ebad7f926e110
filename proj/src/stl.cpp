#include "stless/stl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_set>

#include "stless/error.hpp"

namespace stless::stl {

// ---------------------------------------------------------------------------
// Signal

Signal::Signal(std::vector<std::string> channels, std::vector<double> values)
    : channels_(std::move(channels)), values_(std::move(values)), width_(channels_.size()) {
  if (width_ == 0) throw ValidationError("signal needs at least one channel");
  if (values_.empty() || values_.size() % width_ != 0)
    throw ValidationError("signal values do not form whole rows of " + std::to_string(width_) +
                          " channels");
  std::unordered_set<std::string> seen;
  for (const auto& c : channels_)
    if (!seen.insert(c).second) throw ValidationError("duplicate channel name '" + c + "'");
}

Signal Signal::truncated(std::size_t rows) const {
  rows = std::min(rows, length());
  return Signal(channels_, std::vector<double>(values_.begin(), values_.begin() + rows * width_));
}

// ---------------------------------------------------------------------------
// Predicates and formula nodes

double LinearPredicate::evaluate(std::span<const double> row) const {
  double v = offset;
  for (std::size_t i = 0; i < coeffs.size(); ++i) v += coeffs[i] * row[i];
  return v;
}

bool LinearPredicate::same_constraint(const LinearPredicate& other) const {
  return coeffs == other.coeffs && offset == other.offset;
}

struct Formula::Node {
  Op op;
  LinearPredicate pred;
  std::vector<Formula> children;
  Interval window;
  int horizon;
};

namespace {

void check_interval(Interval w) {
  if (w.lo < 0 || w.hi < 0) throw ValidationError("temporal bounds must be non-negative");
  if (w.lo > w.hi)
    throw ValidationError("interval [" + std::to_string(w.lo) + "," + std::to_string(w.hi) +
                          "] has lower bound above upper bound");
}

}  // namespace

Formula Formula::predicate(LinearPredicate p) {
  if (p.coeffs.empty() || std::all_of(p.coeffs.begin(), p.coeffs.end(), [](double c) { return c == 0.0; }))
    throw ValidationError("predicate needs at least one non-zero channel coefficient");
  return Formula(std::make_shared<const Node>(Node{Op::predicate, std::move(p), {}, {}, 1}));
}

Formula Formula::negation(Formula f) {
  const int h = f.horizon();
  return Formula(std::make_shared<const Node>(Node{Op::negation, {}, {std::move(f)}, {}, h}));
}

Formula Formula::conjunction(Formula a, Formula b) {
  const int h = std::max(a.horizon(), b.horizon());
  return Formula(std::make_shared<const Node>(Node{Op::conjunction, {}, {std::move(a), std::move(b)}, {}, h}));
}

Formula Formula::disjunction(Formula a, Formula b) {
  const int h = std::max(a.horizon(), b.horizon());
  return Formula(std::make_shared<const Node>(Node{Op::disjunction, {}, {std::move(a), std::move(b)}, {}, h}));
}

Formula Formula::always(Interval window, Formula f) {
  check_interval(window);
  const int h = window.hi + f.horizon();
  return Formula(std::make_shared<const Node>(Node{Op::always, {}, {std::move(f)}, window, h}));
}

Formula Formula::eventually(Interval window, Formula f) {
  check_interval(window);
  const int h = window.hi + f.horizon();
  return Formula(std::make_shared<const Node>(Node{Op::eventually, {}, {std::move(f)}, window, h}));
}

Formula Formula::until(Interval window, Formula a, Formula b) {
  check_interval(window);
  const int h = window.hi + std::max(a.horizon(), b.horizon());
  return Formula(std::make_shared<const Node>(Node{Op::until, {}, {std::move(a), std::move(b)}, window, h}));
}

Op Formula::op() const { return node_->op; }
const LinearPredicate& Formula::pred() const { return node_->pred; }
std::size_t Formula::arity() const { return node_->children.size(); }
const Formula& Formula::child(std::size_t i) const { return node_->children.at(i); }
Interval Formula::interval() const { return node_->window; }
int Formula::horizon() const { return node_->horizon; }

bool Formula::operator==(const Formula& other) const {
  if (node_ == other.node_) return true;
  if (op() != other.op()) return false;
  if (op() == Op::predicate) return pred().same_constraint(other.pred());
  if (interval() != other.interval() || arity() != other.arity()) return false;
  for (std::size_t i = 0; i < arity(); ++i)
    if (!(child(i) == other.child(i))) return false;
  return true;
}

int horizon(const Formula& phi) { return phi.horizon(); }

std::size_t node_count(const Formula& phi) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < phi.arity(); ++i) n += node_count(phi.child(i));
  return n;
}

Formula negate(const Formula& phi) {
  if (phi.op() == Op::negation) return phi.child(0);
  return Formula::negation(phi);
}

// ---------------------------------------------------------------------------
// Robustness: bottom-up over each node, producing the value at every start
// time t in [0, rows - horizon(node)].

namespace {

std::vector<double> evaluate(const Formula& f, std::span<const double> values, std::size_t width,
                             std::size_t rows) {
  const std::size_t len = rows - static_cast<std::size_t>(f.horizon()) + 1;
  std::vector<double> out(len);
  switch (f.op()) {
    case Op::predicate: {
      const auto& p = f.pred();
      for (std::size_t t = 0; t < len; ++t) out[t] = p.evaluate(values.subspan(t * width, width));
      break;
    }
    case Op::negation: {
      auto v = evaluate(f.child(0), values, width, rows);
      for (std::size_t t = 0; t < len; ++t) out[t] = -v[t];
      break;
    }
    case Op::conjunction:
    case Op::disjunction: {
      auto a = evaluate(f.child(0), values, width, rows);
      auto b = evaluate(f.child(1), values, width, rows);
      const bool conj = f.op() == Op::conjunction;
      for (std::size_t t = 0; t < len; ++t) out[t] = conj ? std::min(a[t], b[t]) : std::max(a[t], b[t]);
      break;
    }
    case Op::always:
    case Op::eventually: {
      auto v = evaluate(f.child(0), values, width, rows);
      const auto [lo, hi] = f.interval();
      const bool all = f.op() == Op::always;
      for (std::size_t t = 0; t < len; ++t) {
        double acc = v[t + lo];
        for (std::size_t tau = t + lo + 1; tau <= t + hi; ++tau)
          acc = all ? std::min(acc, v[tau]) : std::max(acc, v[tau]);
        out[t] = acc;
      }
      break;
    }
    case Op::until: {
      auto a = evaluate(f.child(0), values, width, rows);
      auto b = evaluate(f.child(1), values, width, rows);
      const auto [lo, hi] = f.interval();
      for (std::size_t t = 0; t < len; ++t) {
        double best = -std::numeric_limits<double>::infinity();
        double prefix = std::numeric_limits<double>::infinity();
        for (std::size_t tau = t; tau <= t + hi; ++tau) {
          prefix = std::min(prefix, a[tau]);
          if (tau >= t + lo) best = std::max(best, std::min(b[tau], prefix));
        }
        out[t] = best;
      }
      break;
    }
  }
  return out;
}

void check_widths(const Formula& f, std::size_t width) {
  if (f.op() == Op::predicate) {
    if (f.pred().coeffs.size() != width)
      throw ValidationError("predicate '" + f.pred().label + "' has " +
                            std::to_string(f.pred().coeffs.size()) + " coefficients, signal has " +
                            std::to_string(width) + " channels");
    return;
  }
  for (std::size_t i = 0; i < f.arity(); ++i) check_widths(f.child(i), width);
}

}  // namespace

double robustness(std::span<const double> values, std::size_t width, const Formula& phi, std::size_t t) {
  if (width == 0 || values.size() % width != 0) throw ValidationError("malformed signal buffer");
  check_widths(phi, width);
  const std::size_t rows = values.size() / width;
  const std::size_t h = static_cast<std::size_t>(phi.horizon());
  if (rows < t + h)
    throw ValidationError("signal of length " + std::to_string(rows) + " is too short: time " +
                          std::to_string(t) + " needs " + std::to_string(t + h) + " samples");
  // Only rows [t, t + h) matter; shift the buffer so the node recursion starts at 0.
  return evaluate(phi, values.subspan(t * width, h * width), width, h)[0];
}

double robustness(const Signal& s, const Formula& phi, std::size_t t) {
  return robustness(s.values(), s.width(), phi, t);
}

// ---------------------------------------------------------------------------
// Predicate windows

namespace {

void collect(const Formula& f, const std::set<int>& offsets, std::vector<PredicateWindow>& out,
             std::vector<std::set<int>>& times) {
  auto shifted = [&](int lo, int hi) {
    std::set<int> s;
    for (int o : offsets)
      for (int k = lo; k <= hi; ++k) s.insert(o + k);
    return s;
  };
  switch (f.op()) {
    case Op::predicate: {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const PredicateWindow& w) { return w.predicate.same_constraint(f.pred()); });
      std::size_t idx = static_cast<std::size_t>(it - out.begin());
      if (it == out.end()) {
        out.push_back({f.pred(), {}});
        times.emplace_back();
      }
      times[idx].insert(offsets.begin(), offsets.end());
      break;
    }
    case Op::negation:
      collect(f.child(0), offsets, out, times);
      break;
    case Op::conjunction:
    case Op::disjunction:
      collect(f.child(0), offsets, out, times);
      collect(f.child(1), offsets, out, times);
      break;
    case Op::always:
    case Op::eventually:
      collect(f.child(0), shifted(f.interval().lo, f.interval().hi), out, times);
      break;
    case Op::until:
      collect(f.child(0), shifted(0, f.interval().hi), out, times);
      collect(f.child(1), shifted(f.interval().lo, f.interval().hi), out, times);
      break;
  }
}

}  // namespace

std::vector<PredicateWindow> collect_predicates(const Formula& phi) {
  std::vector<PredicateWindow> out;
  std::vector<std::set<int>> times;
  collect(phi, {0}, out, times);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].times.assign(times[i].begin(), times[i].end());
  return out;
}

// ---------------------------------------------------------------------------
// Concrete syntax

namespace {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

enum class Tok { number, ident, lparen, rparen, lbrack, rbrack, comma, bang, amp, pipe, plus, minus, star, ge, le, end };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      const int line = line_, col = col_;
      if (pos_ >= text_.size()) {
        out.push_back({Tok::end, "", 0.0, line, col});
        return out;
      }
      const char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && pos_ + 1 < text_.size() &&
                                                          std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
        out.push_back(number(line, col));
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
          advance();
        out.push_back({Tok::ident, std::string(text_.substr(start, pos_ - start)), 0.0, line, col});
        continue;
      }
      if ((c == '>' || c == '<') && pos_ + 1 < text_.size() && text_[pos_ + 1] == '=') {
        advance();
        advance();
        out.push_back({c == '>' ? Tok::ge : Tok::le, c == '>' ? ">=" : "<=", 0.0, line, col});
        continue;
      }
      Tok kind;
      switch (c) {
        case '(': kind = Tok::lparen; break;
        case ')': kind = Tok::rparen; break;
        case '[': kind = Tok::lbrack; break;
        case ']': kind = Tok::rbrack; break;
        case ',': kind = Tok::comma; break;
        case '!': kind = Tok::bang; break;
        case '&': kind = Tok::amp; break;
        case '|': kind = Tok::pipe; break;
        case '+': kind = Tok::plus; break;
        case '-': kind = Tok::minus; break;
        case '*': kind = Tok::star; break;
        default:
          throw ParseError(std::string("unexpected character '") + c + "'", line, col);
      }
      advance();
      out.push_back({kind, std::string(1, c), 0.0, line, col});
    }
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
  }

  Token number(int line, int col) {
    const char* first = text_.data() + pos_;
    double v = 0.0;
    auto res = std::from_chars(first, text_.data() + text_.size(), v);
    if (res.ec != std::errc()) throw ParseError("malformed number", line, col);
    const std::size_t n = static_cast<std::size_t>(res.ptr - first);
    std::string text(first, n);
    for (std::size_t i = 0; i < n; ++i) advance();
    return {Tok::number, text, v, line, col};
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// Precedence, loosest first: '|', '&', 'U', then the prefix operators.
class Parser {
 public:
  Parser(std::vector<Token> tokens, std::span<const std::string> channels)
      : toks_(std::move(tokens)), channels_(channels) {}

  Formula run() {
    Formula f = disjunction();
    if (peek().kind != Tok::end) fail("unexpected '" + peek().text + "'");
    return f;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
  const Token& take() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, peek().line, peek().column); }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what);
    take();
  }

  bool temporal_keyword(const char* name) const {
    return peek().kind == Tok::ident && peek().text == name && peek(1).kind == Tok::lbrack;
  }

  Formula disjunction() {
    Formula f = conjunction();
    while (peek().kind == Tok::pipe) {
      take();
      f = Formula::disjunction(f, conjunction());
    }
    return f;
  }

  Formula conjunction() {
    Formula f = until();
    while (peek().kind == Tok::amp) {
      take();
      f = Formula::conjunction(f, until());
    }
    return f;
  }

  Formula until() {
    Formula f = unary();
    while (temporal_keyword("U")) {
      take();
      Interval w = interval();
      f = Formula::until(w, f, unary());
    }
    return f;
  }

  Formula unary() {
    if (peek().kind == Tok::bang) {
      take();
      return Formula::negation(unary());
    }
    if (temporal_keyword("G") || temporal_keyword("F")) {
      const bool always = take().text == "G";
      Interval w = interval();
      Formula f = unary();
      return always ? Formula::always(w, f) : Formula::eventually(w, f);
    }
    if (peek().kind == Tok::lparen) {
      take();
      Formula f = disjunction();
      expect(Tok::rparen, "')'");
      return f;
    }
    return atom();
  }

  int bound() {
    const Token& t = peek();
    if (t.kind != Tok::number || t.number != std::floor(t.number) || t.number < 0 ||
        t.text.find_first_of(".eE") != std::string::npos)
      fail("expected a non-negative integer time bound");
    take();
    return static_cast<int>(t.number);
  }

  Interval interval() {
    const Token start = peek();
    expect(Tok::lbrack, "'['");
    Interval w;
    w.lo = bound();
    expect(Tok::comma, "','");
    w.hi = bound();
    expect(Tok::rbrack, "']'");
    if (w.lo > w.hi)
      throw ParseError("interval [" + std::to_string(w.lo) + "," + std::to_string(w.hi) +
                           "] has lower bound above upper bound",
                       start.line, start.column);
    return w;
  }

  // Accumulates sign * (affine expression) into coeffs/offset.
  void affine(std::vector<double>& coeffs, double& offset, double sign) {
    bool first = true;
    while (true) {
      double s = sign;
      if (peek().kind == Tok::plus || peek().kind == Tok::minus) {
        if (take().kind == Tok::minus) s = -s;
      } else if (!first) {
        break;
      }
      term(coeffs, offset, s);
      first = false;
    }
  }

  void term(std::vector<double>& coeffs, double& offset, double sign) {
    if (peek().kind == Tok::number) {
      const double v = take().number;
      if (peek().kind == Tok::star) {
        take();
        coeffs[channel()] += sign * v;
      } else {
        offset += sign * v;
      }
      return;
    }
    if (peek().kind == Tok::ident) {
      const std::size_t c = channel();
      double v = 1.0;
      if (peek().kind == Tok::star) {
        take();
        if (peek().kind != Tok::number) fail("expected a number after '*'");
        v = take().number;
      }
      coeffs[c] += sign * v;
      return;
    }
    fail("expected a number or channel name");
  }

  std::size_t channel() {
    if (peek().kind != Tok::ident) fail("expected a channel name");
    const auto it = std::find(channels_.begin(), channels_.end(), peek().text);
    if (it == channels_.end()) fail("unknown channel '" + peek().text + "'");
    take();
    return static_cast<std::size_t>(it - channels_.begin());
  }

  Formula atom() {
    const Token start = peek();
    LinearPredicate p;
    p.coeffs.assign(channels_.size(), 0.0);
    affine(p.coeffs, p.offset, 1.0);
    double rhs_sign;
    if (peek().kind == Tok::ge) {
      rhs_sign = -1.0;
    } else if (peek().kind == Tok::le) {
      rhs_sign = 1.0;
      for (auto& c : p.coeffs) c = -c;
      p.offset = -p.offset;
    } else {
      fail("expected '>=' or '<='");
    }
    take();
    affine(p.coeffs, p.offset, rhs_sign);
    if (std::all_of(p.coeffs.begin(), p.coeffs.end(), [](double c) { return c == 0.0; }))
      throw ParseError("predicate does not depend on any channel", start.line, start.column);
    p.label = render(Formula::predicate(p), channels_);
    p.label = p.label.substr(1, p.label.size() - 2);
    return Formula::predicate(std::move(p));
  }

  std::vector<Token> toks_;
  std::span<const std::string> channels_;
  std::size_t pos_ = 0;
};

std::string render_predicate(const LinearPredicate& p, std::span<const std::string> channels) {
  std::string out;
  for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
    const double c = p.coeffs[i];
    if (c == 0.0) continue;
    const std::string& name = i < channels.size() ? channels[i] : "c" + std::to_string(i);
    if (out.empty()) {
      out += c == 1.0 ? name : c == -1.0 ? "-" + name : format_number(c) + "*" + name;
    } else {
      out += c < 0 ? " - " : " + ";
      const double a = std::abs(c);
      out += a == 1.0 ? name : format_number(a) + "*" + name;
    }
  }
  if (p.offset != 0.0) out += (p.offset < 0 ? " - " : " + ") + format_number(std::abs(p.offset));
  return "(" + out + " >= 0)";
}

std::string render_interval(Interval w) { return "[" + std::to_string(w.lo) + "," + std::to_string(w.hi) + "]"; }

}  // namespace

Formula parse(std::string_view text, std::span<const std::string> channels) {
  return Parser(Lexer(text).run(), channels).run();
}

std::string render(const Formula& phi, std::span<const std::string> channels) {
  switch (phi.op()) {
    case Op::predicate: return render_predicate(phi.pred(), channels);
    case Op::negation: return "!" + render(phi.child(0), channels);
    case Op::conjunction: return "(" + render(phi.child(0), channels) + " & " + render(phi.child(1), channels) + ")";
    case Op::disjunction: return "(" + render(phi.child(0), channels) + " | " + render(phi.child(1), channels) + ")";
    case Op::always: return "G" + render_interval(phi.interval()) + " " + render(phi.child(0), channels);
    case Op::eventually: return "F" + render_interval(phi.interval()) + " " + render(phi.child(0), channels);
    case Op::until:
      return "(" + render(phi.child(0), channels) + " U" + render_interval(phi.interval()) + " " +
             render(phi.child(1), channels) + ")";
  }
  return {};
}

}  // namespace stless::stl
