#include "redkit/sampler.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace redkit::sampler {

Scores score_sentences(const std::vector<mentions::LinkedMention>& mentions, const graph::CooccurrenceGraph& graph) {
    std::map<std::string, std::set<std::string>> cuis_by_sentence;
    for (const auto& m : mentions) cuis_by_sentence[m.sentence_id].insert(m.cui);

    Scores out;
    for (const auto& [sid, cuis] : cuis_by_sentence) {
        const std::vector<std::string> v(cuis.begin(), cuis.end());
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = i + 1; j < v.size(); ++j) total += graph.pair_frequency(v[i], v[j]);
        if (total == 0) {
            out.excluded.push_back(sid);
            continue;
        }
        const double t = static_cast<double>(total);
        out.weights.push_back({sid, t, 1.0 / t});
    }
    return out;
}

Distributions build_distributions(const std::vector<SentenceWeight>& weights) {
    if (weights.empty()) throw PreconditionError("build_distributions: no sentence weights");
    std::vector<double> t;
    bool integral = true;
    for (const auto& w : weights) {
        if (!(w.total_freq > 0.0) || !std::isfinite(w.total_freq))
            throw PreconditionError("build_distributions: non-positive weight for " + w.sentence_id);
        integral = integral && w.total_freq == std::floor(w.total_freq) && w.total_freq < 9.0e15;
        t.push_back(w.total_freq);
    }
    if (integral) {
        std::uint64_t g = 0;
        for (double x : t) g = std::gcd(g, static_cast<std::uint64_t>(x));
        for (double& x : t) x = static_cast<double>(static_cast<std::uint64_t>(x) / g);
    }

    Distributions d;
    double sum = 0.0, inv_sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        d.sentence_ids.push_back(weights[i].sentence_id);
        sum += t[i];
        inv_sum += 1.0 / t[i];
    }
    for (double x : t) {
        d.p.push_back(x / sum);
        d.ip.push_back((1.0 / x) / inv_sum);
    }
    return d;
}

std::vector<std::string> sample(const Distributions& d, std::size_t n, std::uint64_t seed) {
    const std::size_t population = d.sentence_ids.size();
    if (d.p.size() != population || d.ip.size() != population)
        throw PreconditionError("sample: distribution sizes disagree");
    if (n > population)
        throw PreconditionError("sample: n=" + std::to_string(n) + " exceeds " + std::to_string(population) +
                                " sampleable sentences");
    Rng rng(seed);
    std::vector<bool> taken(population, false);
    std::vector<std::string> out;
    auto draw = [&](const std::vector<double>& dist, std::size_t count) {
        for (std::size_t k = 0; k < count; ++k) {
            std::vector<double> w(population, 0.0);
            for (std::size_t i = 0; i < population; ++i)
                if (!taken[i]) w[i] = dist[i];
            const std::size_t i = rng.categorical(w);
            taken[i] = true;
            out.push_back(d.sentence_ids[i]);
        }
    };
    draw(d.p, (n + 1) / 2);
    draw(d.ip, n / 2);
    return out;
}

} // namespace redkit::sampler
