#include "redkit/graph.hpp"

#include <algorithm>
#include <future>

namespace redkit::graph {

std::string edge_key(const std::string& a, const std::string& b) { return a < b ? a + "|" + b : b + "|" + a; }

void CooccurrenceGraph::touch_node(const mentions::LinkedMention& m, const std::string& sentence_id) {
    auto [it, inserted] = nodes_.try_emplace(m.cui);
    ConceptNode& node = it->second;
    if (inserted) {
        node.cui = m.cui;
        node.semantic_type = m.semantic_type;
        node.description = m.surface;
    } else {
        // Order-independent choice of representative metadata.
        node.semantic_type = std::min(node.semantic_type, m.semantic_type);
        node.description = std::min(node.description, m.surface);
    }
    node.sentence_ids.insert(sentence_id);
}

void CooccurrenceGraph::add_sentence(const std::string& sentence_id, const std::vector<mentions::LinkedMention>& mentions) {
    std::set<std::string> cuis;
    for (const auto& m : mentions) cuis.insert(m.cui);
    if (cuis.size() < 2 && !options_.single_mention_nodes) return;
    for (const auto& m : mentions) touch_node(m, sentence_id);

    const std::vector<std::string> sorted(cuis.begin(), cuis.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            auto [it, inserted] = edges_.try_emplace(sorted[i] + "|" + sorted[j]);
            CoEdge& e = it->second;
            if (inserted) {
                e.cui_a = sorted[i];
                e.cui_b = sorted[j];
            }
            if (e.sentence_ids.insert(sentence_id).second) ++e.weight;
        }
    }
}

void CooccurrenceGraph::merge(const CooccurrenceGraph& other) {
    for (const auto& [cui, n] : other.nodes_) {
        auto [it, inserted] = nodes_.try_emplace(cui, n);
        if (inserted) continue;
        ConceptNode& node = it->second;
        node.semantic_type = std::min(node.semantic_type, n.semantic_type);
        node.description = std::min(node.description, n.description);
        node.sentence_ids.insert(n.sentence_ids.begin(), n.sentence_ids.end());
    }
    for (const auto& [key, e] : other.edges_) {
        auto [it, inserted] = edges_.try_emplace(key, e);
        if (inserted) continue;
        it->second.sentence_ids.insert(e.sentence_ids.begin(), e.sentence_ids.end());
        it->second.weight = it->second.sentence_ids.size();
    }
}

std::uint64_t CooccurrenceGraph::pair_frequency(const std::string& a, const std::string& b) const {
    auto it = edges_.find(edge_key(a, b));
    return it == edges_.end() ? 0 : it->second.weight;
}

CooccurrenceGraph CooccurrenceGraph::subgraph(const std::set<std::string>& cuis) const {
    CooccurrenceGraph g(options_);
    for (const auto& [cui, n] : nodes_)
        if (cuis.count(cui)) g.nodes_.emplace(cui, n);
    for (const auto& [key, e] : edges_)
        if (cuis.count(e.cui_a) && cuis.count(e.cui_b)) g.edges_.emplace(key, e);
    return g;
}

std::uint64_t CooccurrenceGraph::total_weight() const {
    std::uint64_t total = 0;
    for (const auto& [key, e] : edges_) total += e.weight;
    return total;
}

void CooccurrenceGraph::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<json> nodes, edges;
    for (const auto& [cui, n] : nodes_)
        nodes.push_back({{"cui", n.cui}, {"semantic_type", n.semantic_type}, {"description", n.description},
                         {"sentence_ids", n.sentence_ids}});
    for (const auto& [key, e] : edges_)
        edges.push_back({{"key", key}, {"cui_a", e.cui_a}, {"cui_b", e.cui_b}, {"weight", e.weight},
                         {"sentence_ids", e.sentence_ids}});
    write_jsonl(dir / "nodes.jsonl", nodes);
    write_jsonl(dir / "edges.jsonl", edges);
}

CooccurrenceGraph CooccurrenceGraph::load(const std::filesystem::path& dir) {
    CooccurrenceGraph g;
    for_each_jsonl(dir / "nodes.jsonl", [&](const json& j) {
        ConceptNode n{j.at("cui"), j.at("semantic_type"), j.at("description"),
                      j.at("sentence_ids").get<std::set<std::string>>()};
        if (n.sentence_ids.empty()) throw ParseError("node " + n.cui + " has no sentence ids");
        g.nodes_.emplace(n.cui, std::move(n));
    });
    for_each_jsonl(dir / "edges.jsonl", [&](const json& j) {
        CoEdge e{j.at("cui_a"), j.at("cui_b"), j.at("weight").get<std::uint64_t>(),
                 j.at("sentence_ids").get<std::set<std::string>>()};
        if (e.cui_a >= e.cui_b) throw ParseError("edge cuis not in sorted order: " + e.cui_a + "|" + e.cui_b);
        if (e.weight < 1) throw ParseError("edge with zero weight: " + e.cui_a + "|" + e.cui_b);
        g.edges_.emplace(e.cui_a + "|" + e.cui_b, std::move(e));
    });
    return g;
}

CooccurrenceGraph build_graph(const std::vector<mentions::LinkedMention>& mentions, GraphOptions options,
                              std::size_t workers) {
    std::map<std::string, std::vector<mentions::LinkedMention>> by_sentence;
    for (const auto& m : mentions) by_sentence[m.sentence_id].push_back(m);

    workers = std::max<std::size_t>(1, std::min(workers, by_sentence.size()));
    std::vector<CooccurrenceGraph> shards(workers, CooccurrenceGraph(options));
    std::vector<std::future<void>> tasks;
    for (std::size_t w = 0; w < workers; ++w) {
        tasks.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, [&, w] {
            std::size_t i = 0;
            for (const auto& [sid, ms] : by_sentence)
                if (i++ % workers == w) shards[w].add_sentence(sid, ms);
        }));
    }
    for (auto& t : tasks) t.get();
    CooccurrenceGraph g(options);
    for (const auto& s : shards) g.merge(s);
    return g;
}

} // namespace redkit::graph
