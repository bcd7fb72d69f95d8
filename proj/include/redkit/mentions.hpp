#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "redkit/corpus.hpp"
#include "redkit/util.hpp"

namespace redkit::mentions {

enum class Linker { UMLS, RXNORM, MESH, GO, NCBI, SNOMED, HPO, DRUGBANK, GS, OTHER };
enum class CoarseType { ChemicalDrug, Disease, GeneProtein, Organism, Anatomy, Other };

std::string to_string(Linker linker);
Linker linker_from_string(const std::string& name);
std::string to_string(CoarseType type);
CoarseType coarse_type_from_string(const std::string& name);
const std::vector<Linker>& all_linkers();

/// Half-open byte range in sentence coordinates.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const Span&) const = default;
    auto operator<=>(const Span&) const = default;
    bool contains(const Span& o) const { return start <= o.start && o.end <= end; }
    bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
};

struct LinkedMention {
    std::string sentence_id;
    Span span;
    std::string surface;
    std::string cui;
    std::string semantic_type;
    Linker source_linker = Linker::UMLS;
    /// Semantic types of mentions absorbed by a merge that disagreed with the kept one.
    std::vector<std::string> alt_semantic_types;
};

struct CandidateLinkSet {
    std::string sentence_id;
    Span span;
    std::string surface;
    std::map<Linker, std::set<std::string>> candidates;
    /// Semantic type of each candidate cui.
    std::map<std::string, std::string> semantic_types;
    CoarseType predicted_coarse_type = CoarseType::Other;
};

using RawMention = std::variant<LinkedMention, CandidateLinkSet>;

/// The 82 semantic types of the MetaMapLite-based pipeline.
class SemanticTypeRegistry {
public:
    SemanticTypeRegistry();
    explicit SemanticTypeRegistry(std::vector<std::string> types);
    static const SemanticTypeRegistry& standard();

    bool contains(const std::string& type) const { return types_.count(type) > 0; }
    std::size_t size() const { return types_.size(); }
    const std::set<std::string>& types() const { return types_; }

private:
    std::set<std::string> types_;
};

class ExtractorError : public Error {
public:
    using Error::Error;
};

class UnresolvableError : public Error {
public:
    using Error::Error;
};

/// Sentence text in, raw mentions out. Implementations wrap a NER/linking tool.
class Extractor {
public:
    virtual ~Extractor() = default;
    virtual std::string name() const = 0;
    virtual std::vector<RawMention> extract(const corpus::SentenceRecord& sentence) = 0;
};

struct GazetteerEntry {
    std::string surface;
    std::string cui;
    std::string semantic_type;
    Linker linker = Linker::UMLS;
    CoarseType coarse_type = CoarseType::Other;
};

/// Case-insensitive whole-word dictionary matcher. A span matched by a single
/// (cui, linker) yields a LinkedMention, otherwise a CandidateLinkSet.
class GazetteerExtractor : public Extractor {
public:
    explicit GazetteerExtractor(std::vector<GazetteerEntry> entries,
                                const SemanticTypeRegistry& registry = SemanticTypeRegistry::standard());
    static GazetteerExtractor from_file(const std::filesystem::path& path,
                                        const SemanticTypeRegistry& registry = SemanticTypeRegistry::standard());

    std::string name() const override { return "gazetteer"; }
    std::vector<RawMention> extract(const corpus::SentenceRecord& sentence) override;

private:
    std::map<std::string, std::vector<GazetteerEntry>> by_surface_;  // key: lower-cased surface
};

/// Runs an external command per sentence: the sentence text is fed on stdin
/// and JSON lines are expected on stdout (see README for the record format).
class CommandExtractor : public Extractor {
public:
    explicit CommandExtractor(std::string command) : command_(std::move(command)) {}
    std::string name() const override { return "command"; }
    std::vector<RawMention> extract(const corpus::SentenceRecord& sentence) override;

private:
    std::string command_;
};

RawMention raw_mention_from_json(const json& j, const corpus::SentenceRecord& sentence);

struct ExtractorOptions {
    std::filesystem::path gazetteer;
    std::string command;
};

using ExtractorFactory = std::function<std::unique_ptr<Extractor>(const ExtractorOptions&)>;

class ExtractorRegistry {
public:
    /// Registry pre-populated with "gazetteer" and "command".
    static ExtractorRegistry& global();
    void add(const std::string& name, ExtractorFactory factory);
    bool has(const std::string& name) const { return factories_.count(name) > 0; }
    std::unique_ptr<Extractor> create(const std::string& name, const ExtractorOptions& options) const;

private:
    std::map<std::string, ExtractorFactory> factories_;
};

/// Ordered linker preference per predicted coarse type.
class PriorityTable {
public:
    static PriorityTable defaults();
    static PriorityTable from_json(const json& j);
    json to_json() const;

    void set(CoarseType type, std::vector<Linker> order) { orders_[type] = std::move(order); }
    /// Full walk order: configured linkers first, then every other linker in enum order.
    std::vector<Linker> order(CoarseType type) const;
    /// Position of `linker` in the generic (Other) order; lower is preferred.
    std::size_t rank(Linker linker) const;

private:
    std::map<CoarseType, std::vector<Linker>> orders_;
};

struct ResolveOptions {
    enum class TieBreak { Lexicographic, SeededRandom };
    TieBreak tie_break = TieBreak::Lexicographic;
    std::uint64_t seed = 0;
};

LinkedMention resolve_cui(const CandidateLinkSet& candidates, const PriorityTable& table = PriorityTable::defaults(),
                          const ResolveOptions& options = {});

/// Consolidates overlapping and whitespace-adjacent mentions. Input must be
/// sorted by start offset; output surfaces are sliced from `sentence_text`.
std::vector<LinkedMention> merge_mentions(const std::vector<LinkedMention>& mentions, std::string_view sentence_text,
                                          const PriorityTable& table = PriorityTable::defaults());

struct SentenceMentions {
    std::string sentence_id;
    std::vector<LinkedMention> mentions;
    std::optional<std::string> error;
};

/// extract, resolve candidate sets, then merge. Extractor failures become a
/// per-sentence error instead of propagating.
SentenceMentions process_sentence(const corpus::SentenceRecord& sentence, Extractor& extractor,
                                  const PriorityTable& table = PriorityTable::defaults(),
                                  const ResolveOptions& options = {});

/// Runs process_sentence over a corpus on `workers` threads; output keeps input order.
std::vector<SentenceMentions> process_corpus(const std::vector<corpus::SentenceRecord>& sentences,
                                             Extractor& extractor, const PriorityTable& table = PriorityTable::defaults(),
                                             const ResolveOptions& options = {}, std::size_t workers = 1);

json to_json(const LinkedMention& m);
LinkedMention mention_from_json(const json& j);
void write_mentions(const std::filesystem::path& path, const std::vector<LinkedMention>& mentions);
std::vector<LinkedMention> read_mentions(const std::filesystem::path& path);

} // namespace redkit::mentions
