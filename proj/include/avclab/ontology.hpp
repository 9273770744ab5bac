#pragma once

// Class ontology: a rooted tree loaded from {name, children} JSON. Relevance
// between classes is derived from shortest-path distance in this tree.

#include <json.hpp>
#include <map>

#include "avclab/common.hpp"

namespace avc {

class Ontology {
 public:
  struct Node {
    std::string name;
    int parent = -1;
    int depth = 0;
    std::vector<int> children;
  };

  static Ontology from_json(const nlohmann::json& j) {
    Ontology ont;
    ont.add_node(j, -1, 0);
    AVC_CHECK_ARG(!ont.nodes_.empty(), "ontology: empty tree");
    return ont;
  }

  static Ontology load(const std::filesystem::path& path) {
    require_exists(path, "ontology");
    try {
      return from_json(nlohmann::json::parse(read_text_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("ontology " + path.string() + ": " + e.what());
    }
  }

  size_t size() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_[size_t(i)]; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int require(const std::string& name) const {
    auto it = index_.find(name);
    AVC_CHECK_ARG(it != index_.end(), "ontology: unknown class '" << name << "'");
    return it->second;
  }

  // Shortest-path length between two nodes of the tree.
  int tree_distance(int a, int b) const {
    AVC_CHECK_ARG(a >= 0 && a < int(nodes_.size()) && b >= 0 && b < int(nodes_.size()),
                  "ontology: node index out of range");
    int da = nodes_[size_t(a)].depth, db = nodes_[size_t(b)].depth;
    int steps = 0;
    while (da > db) {
      a = nodes_[size_t(a)].parent;
      --da;
      ++steps;
    }
    while (db > da) {
      b = nodes_[size_t(b)].parent;
      --db;
      ++steps;
    }
    while (a != b) {
      a = nodes_[size_t(a)].parent;
      b = nodes_[size_t(b)].parent;
      steps += 2;
    }
    return steps;
  }

  int tree_distance(const std::string& a, const std::string& b) const {
    return tree_distance(require(a), require(b));
  }

  // Longest distance between any two nodes (tree diameter).
  int max_distance() const {
    int best = 0;
    for (size_t i = 0; i < nodes_.size(); ++i)
      for (size_t j = i + 1; j < nodes_.size(); ++j)
        best = std::max(best, tree_distance(int(i), int(j)));
    return best;
  }

 private:
  void add_node(const nlohmann::json& j, int parent, int depth) {
    AVC_CHECK_ARG(j.contains("name") && j["name"].is_string(),
                  "ontology: every node needs a string name");
    std::string name = j["name"].get<std::string>();
    AVC_CHECK_ARG(!index_.count(name), "ontology: duplicate node name '" << name << "'");
    int id = int(nodes_.size());
    nodes_.push_back(Node{name, parent, depth, {}});
    index_[name] = id;
    if (parent >= 0) nodes_[size_t(parent)].children.push_back(id);
    if (j.contains("children"))
      for (const auto& child : j["children"]) add_node(child, id, depth + 1);
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> index_;
};

}  // namespace avc
