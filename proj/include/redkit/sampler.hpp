#pragma once

#include <string>
#include <vector>

#include "redkit/graph.hpp"
#include "redkit/mentions.hpp"

namespace redkit::sampler {

struct SentenceWeight {
    std::string sentence_id;
    double total_freq = 0.0;      // t_f: summed graph weights of the sentence's distinct cui pairs
    double inv_total_freq = 0.0;  // 1 / t_f
};

struct Scores {
    std::vector<SentenceWeight> weights;  // sorted by sentence_id
    std::vector<std::string> excluded;    // sentences without any cui pair
};

Scores score_sentences(const std::vector<mentions::LinkedMention>& mentions, const graph::CooccurrenceGraph& graph);

struct Distributions {
    std::vector<std::string> sentence_ids;
    std::vector<double> p;   // proportional to t_f
    std::vector<double> ip;  // proportional to 1 / t_f
};

/// When every t_f is integral the weights are first divided by their gcd, so
/// multiplying all graph weights by a positive integer yields bit-identical output.
Distributions build_distributions(const std::vector<SentenceWeight>& weights);

/// ceil(n/2) draws from P, then floor(n/2) from IP, without replacement within
/// and across halves. Returned in draw order.
std::vector<std::string> sample(const Distributions& d, std::size_t n, std::uint64_t seed);

} // namespace redkit::sampler
