#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "redkit/mentions.hpp"

namespace redkit::graph {

struct ConceptNode {
    std::string cui;
    std::string semantic_type;
    std::string description;
    std::set<std::string> sentence_ids;

    bool operator==(const ConceptNode&) const = default;
};

/// Undirected edge; cui_a < cui_b.
struct CoEdge {
    std::string cui_a;
    std::string cui_b;
    std::uint64_t weight = 0;
    std::set<std::string> sentence_ids;

    bool operator==(const CoEdge&) const = default;
};

/// "a|b" with the two cuis in sorted order.
std::string edge_key(const std::string& a, const std::string& b);

struct GraphOptions {
    /// Sentences with fewer than two distinct cuis still contribute nodes.
    bool single_mention_nodes = true;
};

/// Intra-sentence co-occurrence graph. A pair counts at most once per
/// sentence, so weight == |sentence_ids| on every edge.
class CooccurrenceGraph {
public:
    explicit CooccurrenceGraph(GraphOptions options = {}) : options_(options) {}

    /// Adds every mention of one sentence. Re-adding a sentence already seen
    /// leaves existing counts unchanged.
    void add_sentence(const std::string& sentence_id, const std::vector<mentions::LinkedMention>& mentions);
    /// Union of two graphs (weights follow the merged sentence sets).
    void merge(const CooccurrenceGraph& other);

    std::uint64_t pair_frequency(const std::string& a, const std::string& b) const;
    CooccurrenceGraph subgraph(const std::set<std::string>& cuis) const;

    const std::map<std::string, ConceptNode>& nodes() const { return nodes_; }
    const std::map<std::string, CoEdge>& edges() const { return edges_; }
    std::uint64_t total_weight() const;

    void save(const std::filesystem::path& dir) const;
    static CooccurrenceGraph load(const std::filesystem::path& dir);

    bool operator==(const CooccurrenceGraph& o) const { return nodes_ == o.nodes_ && edges_ == o.edges_; }

private:
    void touch_node(const mentions::LinkedMention& m, const std::string& sentence_id);

    GraphOptions options_;
    std::map<std::string, ConceptNode> nodes_;
    std::map<std::string, CoEdge> edges_;
};

/// Groups `mentions` by sentence_id and builds the graph; `workers` > 1 builds
/// shards in parallel and merges them.
CooccurrenceGraph build_graph(const std::vector<mentions::LinkedMention>& mentions, GraphOptions options = {},
                              std::size_t workers = 1);

} // namespace redkit::graph
