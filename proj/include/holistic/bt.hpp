#pragma once

#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace holistic::bt {

enum class TickStatus { running, success, failure };

inline const char* to_string(TickStatus s) {
  switch (s) {
    case TickStatus::running: return "running";
    case TickStatus::success: return "success";
    case TickStatus::failure: return "failure";
  }
  return "?";
}

enum class NodeKind {
  sequence,
  memory_sequence,
  selector,
  success_is_running,
  failure_is_running,
  inverter,
  leaf
};

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::sequence: return "sequence";
    case NodeKind::memory_sequence: return "memory_sequence";
    case NodeKind::selector: return "selector";
    case NodeKind::success_is_running: return "success_is_running";
    case NodeKind::failure_is_running: return "failure_is_running";
    case NodeKind::inverter: return "inverter";
    case NodeKind::leaf: return "leaf";
  }
  return "?";
}

inline bool is_decorator(NodeKind k) {
  return k == NodeKind::success_is_running || k == NodeKind::failure_is_running ||
         k == NodeKind::inverter;
}

class TreeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A leaf behaviour. `halt` is called when a running leaf is pre-empted.
template <class Context>
struct Behaviour {
  std::function<TickStatus(Context&)> tick;
  std::function<void(Context&)> halt;
};

template <class Context>
class Node {
 public:
  using Ptr = std::unique_ptr<Node>;

  static Ptr leaf(std::string name, Behaviour<Context> b) {
    if (!b.tick) throw TreeError("leaf '" + name + "' has no behaviour");
    Ptr n(new Node(NodeKind::leaf, std::move(name)));
    n->behaviour_ = std::move(b);
    return n;
  }
  static Ptr leaf(std::string name, std::function<TickStatus(Context&)> f) {
    return leaf(std::move(name), Behaviour<Context>{std::move(f), {}});
  }

  static Ptr make(NodeKind kind, std::vector<Ptr> children, std::string name = {}) {
    if (kind == NodeKind::leaf) throw TreeError("use Node::leaf for leaves");
    if (is_decorator(kind) && children.size() != 1)
      throw TreeError(std::string(to_string(kind)) + " needs exactly one child");
    if (!is_decorator(kind) && children.empty())
      throw TreeError(std::string(to_string(kind)) + " needs at least one child");
    for (const auto& c : children)
      if (!c) throw TreeError("null child");
    Ptr n(new Node(kind, name.empty() ? to_string(kind) : std::move(name)));
    n->children_ = std::move(children);
    return n;
  }

  TickStatus tick(Context& ctx) {
    ++ticks_;
    last_ = evaluate(ctx);
    return last_;
  }

  // Stops a running subtree: resets memory and lets running leaves clean up.
  void halt(Context& ctx) {
    if (last_ != TickStatus::running) return;
    for (auto& c : children_) c->halt(ctx);
    if (kind_ == NodeKind::leaf && behaviour_.halt) behaviour_.halt(ctx);
    cursor_ = 0;
    last_ = TickStatus::failure;
  }

  NodeKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  std::size_t tick_count() const { return ticks_; }
  std::size_t cursor() const { return cursor_; }
  const std::vector<Ptr>& children() const { return children_; }
  Node& child(std::size_t i) { return *children_.at(i); }

  // Depth-first search by name (first match).
  Node* find(std::string_view n) {
    if (name_ == n) return this;
    for (auto& c : children_)
      if (Node* f = c->find(n)) return f;
    return nullptr;
  }

 private:
  Node(NodeKind k, std::string n) : kind_(k), name_(std::move(n)) {}

  void halt_after(Context& ctx, std::size_t i) {
    for (std::size_t j = i + 1; j < children_.size(); ++j) children_[j]->halt(ctx);
  }

  TickStatus evaluate(Context& ctx) {
    switch (kind_) {
      case NodeKind::leaf:
        return behaviour_.tick(ctx);
      case NodeKind::sequence:
        for (std::size_t i = 0; i < children_.size(); ++i) {
          const TickStatus s = children_[i]->tick(ctx);
          if (s != TickStatus::success) {
            halt_after(ctx, i);
            return s;
          }
        }
        return TickStatus::success;
      case NodeKind::memory_sequence:
        for (; cursor_ < children_.size(); ++cursor_) {
          const TickStatus s = children_[cursor_]->tick(ctx);
          if (s == TickStatus::running) return s;
          if (s == TickStatus::failure) {
            cursor_ = 0;
            return s;
          }
        }
        cursor_ = 0;
        return TickStatus::success;
      case NodeKind::selector:
        for (std::size_t i = 0; i < children_.size(); ++i) {
          const TickStatus s = children_[i]->tick(ctx);
          if (s != TickStatus::failure) {
            halt_after(ctx, i);
            return s;
          }
        }
        return TickStatus::failure;
      case NodeKind::success_is_running: {
        const TickStatus s = children_[0]->tick(ctx);
        return s == TickStatus::success ? TickStatus::running : s;
      }
      case NodeKind::failure_is_running: {
        const TickStatus s = children_[0]->tick(ctx);
        return s == TickStatus::failure ? TickStatus::running : s;
      }
      case NodeKind::inverter: {
        const TickStatus s = children_[0]->tick(ctx);
        if (s == TickStatus::success) return TickStatus::failure;
        if (s == TickStatus::failure) return TickStatus::success;
        return s;
      }
    }
    return TickStatus::failure;
  }

  NodeKind kind_;
  std::string name_;
  std::vector<Ptr> children_;
  Behaviour<Context> behaviour_;
  std::size_t cursor_ = 0;
  std::size_t ticks_ = 0;
  TickStatus last_ = TickStatus::failure;
};

// ---- Text trees ----
//
//   tree  := '(' kind [':' name] child* ')' | '(' 'leaf' type param* ')'
//   param := key '=' value
//
// Kinds: sequence, memory_sequence, selector, success_is_running,
// failure_is_running, inverter. ';' starts a comment.

using LeafParams = std::map<std::string, std::string>;

template <class Context>
using LeafFactory = std::function<Behaviour<Context>(const LeafParams&)>;

template <class Context>
class LeafRegistry {
 public:
  void add(const std::string& type, LeafFactory<Context> f) { factories_[type] = std::move(f); }
  bool contains(const std::string& type) const { return factories_.count(type) != 0; }
  Behaviour<Context> make(const std::string& type, const LeafParams& p) const {
    auto it = factories_.find(type);
    if (it == factories_.end()) throw TreeError("unknown leaf type '" + type + "'");
    return it->second(p);
  }

 private:
  std::map<std::string, LeafFactory<Context>> factories_;
};

namespace detail {

struct Lexer {
  std::string_view s;
  std::size_t pos = 0;

  void skip() {
    while (pos < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[pos]))) {
        ++pos;
      } else if (s[pos] == ';') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }
  bool at_end() {
    skip();
    return pos >= s.size();
  }
  char peek() {
    skip();
    return pos < s.size() ? s[pos] : '\0';
  }
  void expect(char c) {
    if (peek() != c) throw TreeError(std::string("expected '") + c + "' at offset " + std::to_string(pos));
    ++pos;
  }
  std::string atom() {
    skip();
    const std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '(' &&
           s[pos] != ')' && s[pos] != ';')
      ++pos;
    if (pos == start) throw TreeError("expected a word at offset " + std::to_string(pos));
    return std::string(s.substr(start, pos - start));
  }
};

inline NodeKind kind_from(const std::string& w) {
  static const std::map<std::string, NodeKind> kinds = {
      {"sequence", NodeKind::sequence},
      {"memory_sequence", NodeKind::memory_sequence},
      {"selector", NodeKind::selector},
      {"success_is_running", NodeKind::success_is_running},
      {"failure_is_running", NodeKind::failure_is_running},
      {"inverter", NodeKind::inverter},
  };
  auto it = kinds.find(w);
  if (it == kinds.end()) throw TreeError("unknown node kind '" + w + "'");
  return it->second;
}

template <class Context>
typename Node<Context>::Ptr parse_node(Lexer& lx, const LeafRegistry<Context>& reg) {
  lx.expect('(');
  std::string head = lx.atom();
  std::string name;
  if (const auto colon = head.find(':'); colon != std::string::npos) {
    name = head.substr(colon + 1);
    head = head.substr(0, colon);
  }
  if (head == "leaf") {
    const std::string type = lx.atom();
    LeafParams params;
    while (lx.peek() != ')') {
      if (lx.peek() == '(') throw TreeError("leaf '" + type + "' cannot have children");
      const std::string kv = lx.atom();
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw TreeError("bad leaf parameter '" + kv + "'");
      params[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    lx.expect(')');
    std::string label = name.empty() ? type : name;
    return Node<Context>::leaf(std::move(label), reg.make(type, params));
  }
  const NodeKind kind = kind_from(head);
  std::vector<typename Node<Context>::Ptr> children;
  while (lx.peek() == '(') children.push_back(parse_node(lx, reg));
  lx.expect(')');
  return Node<Context>::make(kind, std::move(children), name);
}

}  // namespace detail

template <class Context>
typename Node<Context>::Ptr parse_tree(std::string_view text, const LeafRegistry<Context>& reg) {
  detail::Lexer lx{text};
  auto root = detail::parse_node(lx, reg);
  if (!lx.at_end()) throw TreeError("trailing text after tree");
  return root;
}

}  // namespace holistic::bt
