#pragma once

// Arithmetic expression engine for coefficient fields.  Fields are written as
// text over variables x1..xd ("1 + 0.3*sin(x1*x2)") and compiled to a flat
// postfix program so that path simulation can evaluate them without walking a
// tree or allocating.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <memory>
#include <ostream>
#include <sstream>

#include "fkpde/common.hpp"

namespace fkpde {

enum class BinOp : std::uint8_t { add, sub, mul, div, pow };
enum class UnFn : std::uint8_t { neg, sin, cos, exp, tanh, abs };
enum class BinFn : std::uint8_t { min, max };

struct AstNode {
  enum class Kind : std::uint8_t { number, variable, unary, binary, binfn } kind;
  double value = 0;     // number
  int var = 0;          // variable, 1-based
  BinOp op = BinOp::add;
  UnFn ufn = UnFn::neg;
  BinFn bfn = BinFn::min;
  std::unique_ptr<AstNode> lhs, rhs;  // unary uses lhs only
};

using AstPtr = std::unique_ptr<AstNode>;

struct FieldExpr {
  AstPtr ast;
  std::string source;  // original text, kept for config hashing / reports
  int max_var = 0;     // highest variable index referenced
};

namespace detail {

class ExprParser {
public:
  explicit ExprParser(std::string_view src) : src_(src) {}

  AstPtr parse(int* max_var) {
    max_var_ = 0;
    auto e = expression();
    skip_ws();
    if (pos_ != src_.size()) fail_at("unexpected trailing input");
    *max_var = max_var_;
    return e;
  }

private:
  std::string_view src_;
  std::size_t pos_ = 0;
  int max_var_ = 0;

  [[noreturn]] void fail_at(const std::string& what) {
    fail(ErrKind::parse, what + " at byte " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  // expression := term (('+'|'-') term)*
  AstPtr expression() {
    auto lhs = term();
    while (true) {
      char c = peek();
      if (c != '+' && c != '-') return lhs;
      ++pos_;
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::binary;
      node->op = c == '+' ? BinOp::add : BinOp::sub;
      node->lhs = std::move(lhs);
      node->rhs = term();
      lhs = std::move(node);
    }
  }

  // term := unary (('*'|'/') unary)*
  AstPtr term() {
    auto lhs = unary();
    while (true) {
      char c = peek();
      if (c != '*' && c != '/') return lhs;
      ++pos_;
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::binary;
      node->op = c == '*' ? BinOp::mul : BinOp::div;
      node->lhs = std::move(lhs);
      node->rhs = unary();
      lhs = std::move(node);
    }
  }

  // unary := '-' unary | power
  AstPtr unary() {
    if (consume('-')) {
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::unary;
      node->ufn = UnFn::neg;
      node->lhs = unary();
      return node;
    }
    return power();
  }

  // power := atom ('^' unary)?   -- right associative, exponent may be signed
  AstPtr power() {
    auto base = atom();
    if (!consume('^')) return base;
    auto node = std::make_unique<AstNode>();
    node->kind = AstNode::Kind::binary;
    node->op = BinOp::pow;
    node->lhs = std::move(base);
    node->rhs = unary();
    return node;
  }

  AstPtr atom() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      auto e = expression();
      if (!consume(')')) fail_at("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    if (c == '\0') fail_at("unexpected end of input");
    fail_at(std::string("unexpected character '") + c + "'");
  }

  AstPtr number() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
      ++pos_;
    // exponent suffix: 1.5e-3
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t mark = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      } else {
        pos_ = mark;  // 'e' belongs to an identifier that follows, not this literal
      }
    }
    std::string text(src_.substr(start, pos_ - start));
    try {
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::number;
      node->value = std::stod(text);
      return node;
    } catch (const std::exception&) {
      pos_ = start;
      fail_at("malformed number '" + text + "'");
    }
  }

  AstPtr identifier() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    std::string name(src_.substr(start, pos_ - start));

    // variable x<k>
    if (name.size() >= 2 && name[0] == 'x' &&
        std::all_of(name.begin() + 1, name.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      int idx = std::stoi(name.substr(1));
      if (idx < 1) {
        pos_ = start;
        fail_at("variable index must be >= 1");
      }
      max_var_ = std::max(max_var_, idx);
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::variable;
      node->var = idx;
      return node;
    }

    auto unary_fn = [&](UnFn f) -> AstPtr {
      if (!consume('(')) fail_at("expected '(' after " + name);
      auto arg = expression();
      if (consume(',')) fail_at(name + " takes one argument");
      if (!consume(')')) fail_at("expected ')'");
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::unary;
      node->ufn = f;
      node->lhs = std::move(arg);
      return node;
    };
    auto binary_fn = [&](BinFn f) -> AstPtr {
      if (!consume('(')) fail_at("expected '(' after " + name);
      auto a = expression();
      if (!consume(',')) fail_at(name + " takes two arguments");
      auto b = expression();
      if (!consume(')')) fail_at("expected ')'");
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::binfn;
      node->bfn = f;
      node->lhs = std::move(a);
      node->rhs = std::move(b);
      return node;
    };

    if (name == "sin") return unary_fn(UnFn::sin);
    if (name == "cos") return unary_fn(UnFn::cos);
    if (name == "exp") return unary_fn(UnFn::exp);
    if (name == "tanh") return unary_fn(UnFn::tanh);
    if (name == "abs") return unary_fn(UnFn::abs);
    if (name == "min") return binary_fn(BinFn::min);
    if (name == "max") return binary_fn(BinFn::max);
    if (name == "pi") {
      auto node = std::make_unique<AstNode>();
      node->kind = AstNode::Kind::number;
      node->value = kPi;
      return node;
    }
    pos_ = start;
    fail_at("unknown identifier '" + name + "'");
  }
};

inline void print_ast(const AstNode& n, std::ostream& os) {
  // Fully parenthesized so that parse(print(ast)) reproduces the tree exactly.
  switch (n.kind) {
    case AstNode::Kind::number: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", n.value);
      os << buf;
      return;
    }
    case AstNode::Kind::variable:
      os << 'x' << n.var;
      return;
    case AstNode::Kind::unary:
      switch (n.ufn) {
        case UnFn::neg: os << "(-"; print_ast(*n.lhs, os); os << ')'; return;
        case UnFn::sin: os << "sin("; break;
        case UnFn::cos: os << "cos("; break;
        case UnFn::exp: os << "exp("; break;
        case UnFn::tanh: os << "tanh("; break;
        case UnFn::abs: os << "abs("; break;
      }
      print_ast(*n.lhs, os);
      os << ')';
      return;
    case AstNode::Kind::binary: {
      const char* op = n.op == BinOp::add   ? "+"
                       : n.op == BinOp::sub ? "-"
                       : n.op == BinOp::mul ? "*"
                       : n.op == BinOp::div ? "/"
                                            : "^";
      os << '(';
      print_ast(*n.lhs, os);
      os << op;
      print_ast(*n.rhs, os);
      os << ')';
      return;
    }
    case AstNode::Kind::binfn:
      os << (n.bfn == BinFn::min ? "min(" : "max(");
      print_ast(*n.lhs, os);
      os << ',';
      print_ast(*n.rhs, os);
      os << ')';
      return;
  }
}

inline bool ast_equal(const AstNode& a, const AstNode& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case AstNode::Kind::number:
      return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    case AstNode::Kind::variable: return a.var == b.var;
    case AstNode::Kind::unary: return a.ufn == b.ufn && ast_equal(*a.lhs, *b.lhs);
    case AstNode::Kind::binary:
      return a.op == b.op && ast_equal(*a.lhs, *b.lhs) && ast_equal(*a.rhs, *b.rhs);
    case AstNode::Kind::binfn:
      return a.bfn == b.bfn && ast_equal(*a.lhs, *b.lhs) && ast_equal(*a.rhs, *b.rhs);
  }
  return false;
}

}  // namespace detail

inline FieldExpr parse_field_expr(std::string_view src) {
  if (src.empty() ||
      std::all_of(src.begin(), src.end(),
                  [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
    fail(ErrKind::parse, "empty expression");
  FieldExpr fe;
  detail::ExprParser p(src);
  fe.ast = p.parse(&fe.max_var);
  fe.source = std::string(src);
  return fe;
}

inline std::string print_field_expr(const FieldExpr& fe) {
  std::ostringstream os;
  detail::print_ast(*fe.ast, os);
  return os.str();
}

inline bool field_expr_equal(const FieldExpr& a, const FieldExpr& b) {
  return detail::ast_equal(*a.ast, *b.ast);
}

/// Postfix program compiled from a FieldExpr.  Evaluation runs on a small
/// value stack; constant subtrees are folded at compile time.
class CompiledExpr {
public:
  CompiledExpr() { set_constant(0.0); }

  explicit CompiledExpr(const FieldExpr& fe) : source_(fe.source) {
    compile(*fe.ast);
    if (ops_.size() == 1 && ops_[0].code == OpCode::push_const) {
      constant_ = true;
      const_value_ = ops_[0].payload;
    }
  }

  static CompiledExpr from_source(std::string_view src) { return CompiledExpr(parse_field_expr(src)); }

  void set_constant(double v) {
    ops_.assign(1, Op{OpCode::push_const, v, 0});
    constant_ = true;
    const_value_ = v;
    source_ = std::to_string(v);
  }

  bool is_constant() const { return constant_; }
  double constant_value() const { return const_value_; }
  const std::string& source() const { return source_; }

  double eval(const double* x) const {
    if (constant_) {
      if (!std::isfinite(const_value_))
        fail(ErrKind::eval, "non-finite constant from '" + source_ + "'");
      return const_value_;
    }
    double stack[64];
    int top = -1;
    for (const Op& op : ops_) {
      switch (op.code) {
        case OpCode::push_const: stack[++top] = op.payload; break;
        case OpCode::push_var: stack[++top] = x[op.ivar]; break;
        case OpCode::neg: stack[top] = -stack[top]; break;
        case OpCode::fsin: stack[top] = std::sin(stack[top]); break;
        case OpCode::fcos: stack[top] = std::cos(stack[top]); break;
        case OpCode::fexp: stack[top] = std::exp(stack[top]); break;
        case OpCode::ftanh: stack[top] = std::tanh(stack[top]); break;
        case OpCode::fabs: stack[top] = std::fabs(stack[top]); break;
        case OpCode::add: --top; stack[top] += stack[top + 1]; break;
        case OpCode::sub: --top; stack[top] -= stack[top + 1]; break;
        case OpCode::mul: --top; stack[top] *= stack[top + 1]; break;
        case OpCode::div:
          --top;
          if (stack[top + 1] == 0.0) fail(ErrKind::eval, "division by zero in '" + source_ + "'");
          stack[top] /= stack[top + 1];
          break;
        case OpCode::pw:
          --top;
          if (stack[top] == 0.0 && stack[top + 1] < 0.0)
            fail(ErrKind::eval, "0^negative in '" + source_ + "'");
          stack[top] = std::pow(stack[top], stack[top + 1]);
          break;
        case OpCode::fmin: --top; stack[top] = std::min(stack[top], stack[top + 1]); break;
        case OpCode::fmax: --top; stack[top] = std::max(stack[top], stack[top + 1]); break;
      }
    }
    double r = stack[0];
    if (!std::isfinite(r)) fail(ErrKind::eval, "non-finite value from '" + source_ + "'");
    return r;
  }

  double eval(std::span<const double> x) const { return eval(x.data()); }
  int max_var() const { return max_var_; }

private:
  enum class OpCode : std::uint8_t {
    push_const, push_var, neg, fsin, fcos, fexp, ftanh, fabs,
    add, sub, mul, div, pw, fmin, fmax,
  };
  struct Op {
    OpCode code;
    double payload;  // push_const
    int ivar;        // push_var, 0-based
  };

  std::vector<Op> ops_;
  bool constant_ = false;
  double const_value_ = 0;
  int max_var_ = 0;
  std::string source_;

  // Returns true when the emitted subtree is a constant; folds it in place.
  bool compile(const AstNode& n) {
    auto fold_to = [&](std::size_t from, double v) {
      ops_.resize(from);
      ops_.push_back(Op{OpCode::push_const, v, 0});
    };
    std::size_t mark = ops_.size();
    switch (n.kind) {
      case AstNode::Kind::number:
        ops_.push_back(Op{OpCode::push_const, n.value, 0});
        return true;
      case AstNode::Kind::variable:
        ops_.push_back(Op{OpCode::push_var, 0, n.var - 1});
        max_var_ = std::max(max_var_, n.var);
        return false;
      case AstNode::Kind::unary: {
        bool c = compile(*n.lhs);
        OpCode oc = OpCode::neg;
        switch (n.ufn) {
          case UnFn::neg: oc = OpCode::neg; break;
          case UnFn::sin: oc = OpCode::fsin; break;
          case UnFn::cos: oc = OpCode::fcos; break;
          case UnFn::exp: oc = OpCode::fexp; break;
          case UnFn::tanh: oc = OpCode::ftanh; break;
          case UnFn::abs: oc = OpCode::fabs; break;
        }
        ops_.push_back(Op{oc, 0, 0});
        if (c) {
          fold_to(mark, eval_range(mark));
          return true;
        }
        return false;
      }
      case AstNode::Kind::binary:
      case AstNode::Kind::binfn: {
        bool cl = compile(*n.lhs);
        bool cr = compile(*n.rhs);
        OpCode oc;
        if (n.kind == AstNode::Kind::binary) {
          oc = n.op == BinOp::add   ? OpCode::add
               : n.op == BinOp::sub ? OpCode::sub
               : n.op == BinOp::mul ? OpCode::mul
               : n.op == BinOp::div ? OpCode::div
                                    : OpCode::pw;
        } else {
          oc = n.bfn == BinFn::min ? OpCode::fmin : OpCode::fmax;
        }
        ops_.push_back(Op{oc, 0, 0});
        if (cl && cr) {
          fold_to(mark, eval_range(mark));
          return true;
        }
        return false;
      }
    }
    return false;
  }

  // Evaluates ops_[from..] which by construction reference no variables.
  double eval_range(std::size_t from) const {
    double stack[64];
    int top = -1;
    for (std::size_t i = from; i < ops_.size(); ++i) {
      const Op& op = ops_[i];
      switch (op.code) {
        case OpCode::push_const: stack[++top] = op.payload; break;
        case OpCode::push_var: fail(ErrKind::parse, "internal: variable in constant fold"); break;
        case OpCode::neg: stack[top] = -stack[top]; break;
        case OpCode::fsin: stack[top] = std::sin(stack[top]); break;
        case OpCode::fcos: stack[top] = std::cos(stack[top]); break;
        case OpCode::fexp: stack[top] = std::exp(stack[top]); break;
        case OpCode::ftanh: stack[top] = std::tanh(stack[top]); break;
        case OpCode::fabs: stack[top] = std::fabs(stack[top]); break;
        case OpCode::add: --top; stack[top] += stack[top + 1]; break;
        case OpCode::sub: --top; stack[top] -= stack[top + 1]; break;
        case OpCode::mul: --top; stack[top] *= stack[top + 1]; break;
        case OpCode::div:
          --top;
          // constant division by zero surfaces at first eval, not here
          stack[top] = stack[top + 1] == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                             : stack[top] / stack[top + 1];
          break;
        case OpCode::pw: --top; stack[top] = std::pow(stack[top], stack[top + 1]); break;
        case OpCode::fmin: --top; stack[top] = std::min(stack[top], stack[top + 1]); break;
        case OpCode::fmax: --top; stack[top] = std::max(stack[top], stack[top + 1]); break;
      }
    }
    return stack[0];
  }
};

}  // namespace fkpde
