#include "redkit/mentions.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <future>
#include <sys/wait.h>
#include <unistd.h>

namespace redkit::mentions {

namespace {

constexpr std::array<std::pair<Linker, const char*>, 10> kLinkerNames{{
    {Linker::UMLS, "UMLS"},
    {Linker::RXNORM, "RXNORM"},
    {Linker::MESH, "MESH"},
    {Linker::GO, "GO"},
    {Linker::NCBI, "NCBI"},
    {Linker::SNOMED, "SNOMED"},
    {Linker::HPO, "HPO"},
    {Linker::DRUGBANK, "DRUGBANK"},
    {Linker::GS, "GS"},
    {Linker::OTHER, "OTHER"},
}};

constexpr std::array<std::pair<CoarseType, const char*>, 6> kCoarseNames{{
    {CoarseType::ChemicalDrug, "CHEMICAL_DRUG"},
    {CoarseType::Disease, "DISEASE"},
    {CoarseType::GeneProtein, "GENE_PROTEIN"},
    {CoarseType::Organism, "ORGANISM"},
    {CoarseType::Anatomy, "ANATOMY"},
    {CoarseType::Other, "OTHER"},
}};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

} // namespace

std::string to_string(Linker linker) {
    for (auto [l, n] : kLinkerNames)
        if (l == linker) return n;
    return "OTHER";
}

Linker linker_from_string(const std::string& name) {
    const std::string upper = [&] {
        std::string s = name;
        for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return s;
    }();
    for (auto [l, n] : kLinkerNames)
        if (upper == n) return l;
    throw ParseError("unknown linker '" + name + "'");
}

std::string to_string(CoarseType type) {
    for (auto [t, n] : kCoarseNames)
        if (t == type) return n;
    return "OTHER";
}

CoarseType coarse_type_from_string(const std::string& name) {
    for (auto [t, n] : kCoarseNames)
        if (name == n) return t;
    throw ParseError("unknown coarse type '" + name + "'");
}

const std::vector<Linker>& all_linkers() {
    static const std::vector<Linker> linkers = [] {
        std::vector<Linker> v;
        for (auto [l, n] : kLinkerNames) v.push_back(l);
        return v;
    }();
    return linkers;
}

// ------------------------------------------------------------ semantic types

SemanticTypeRegistry::SemanticTypeRegistry()
    : SemanticTypeRegistry(std::vector<std::string>{
          "Amino Acid, Peptide, or Protein", "Acquired Abnormality", "Amino Acid Sequence", "Amphibian",
          "Anatomical Abnormality", "Animal", "Anatomical Structure", "Antibiotic", "Archaeon",
          "Biologically Active Substance", "Bacterium", "Body Substance", "Body System", "Behavior",
          "Biologic Function", "Body Location or Region", "Biomedical or Dental Material",
          "Body Part, Organ, or Organ Component", "Body Space or Junction", "Cell Component", "Cell Function",
          "Cell", "Congenital Abnormality", "Chemical", "Chemical Viewed Functionally",
          "Chemical Viewed Structurally", "Clinical Attribute", "Clinical Drug", "Cell or Molecular Dysfunction",
          "Carbohydrate Sequence", "Diagnostic Procedure", "Daily or Recreational Activity", "Disease or Syndrome",
          "Environmental Effect of Humans", "Element, Ion, or Isotope", "Experimental Model of Disease",
          "Embryonic Structure", "Enzyme", "Eukaryote", "Fully Formed Anatomical Structure", "Fungus", "Food",
          "Genetic Function", "Gene or Genome", "Human-caused Phenomenon or Process", "Health Care Activity",
          "Hazardous or Poisonous Substance", "Hormone", "Immunologic Factor", "Individual Behavior",
          "Inorganic Chemical", "Injury or Poisoning", "Indicator, Reagent, or Diagnostic Aid",
          "Laboratory Procedure", "Laboratory or Test Result", "Mammal", "Molecular Biology Research Technique",
          "Mental Process", "Mental or Behavioral Dysfunction", "Molecular Sequence", "Neoplastic Process",
          "Nucleic Acid, Nucleoside, or Nucleotide", "Nucleotide Sequence", "Organic Chemical",
          "Organism Attribute", "Organism Function", "Organism", "Organ or Tissue Function",
          "Pathologic Function", "Pharmacologic Substance", "Plant", "Population Group", "Receptor", "Reptile",
          "Substance", "Social Behavior", "Sign or Symptom", "Tissue", "Therapeutic or Preventive Procedure",
          "Virus", "Vitamin", "Vertebrate"}) {}

SemanticTypeRegistry::SemanticTypeRegistry(std::vector<std::string> types) : types_(types.begin(), types.end()) {}

const SemanticTypeRegistry& SemanticTypeRegistry::standard() {
    static const SemanticTypeRegistry registry;
    return registry;
}

// ---------------------------------------------------------------- gazetteer

GazetteerExtractor::GazetteerExtractor(std::vector<GazetteerEntry> entries, const SemanticTypeRegistry& registry) {
    for (auto& e : entries) {
        if (trim(e.surface).empty()) throw ParseError("gazetteer entry with empty surface");
        if (e.cui.empty()) throw ParseError("gazetteer entry '" + e.surface + "' without cui");
        if (!registry.contains(e.semantic_type))
            throw ParseError("gazetteer entry '" + e.surface + "': unknown semantic type '" + e.semantic_type + "'");
        by_surface_[to_lower(e.surface)].push_back(std::move(e));
    }
}

GazetteerExtractor GazetteerExtractor::from_file(const std::filesystem::path& path, const SemanticTypeRegistry& registry) {
    std::vector<GazetteerEntry> entries;
    for_each_jsonl(path, [&](const json& j) {
        GazetteerEntry e;
        e.surface = j.at("surface").get<std::string>();
        e.cui = j.at("cui").get<std::string>();
        e.semantic_type = j.at("semantic_type").get<std::string>();
        e.linker = linker_from_string(j.value("linker", "UMLS"));
        e.coarse_type = coarse_type_from_string(j.value("coarse_type", "OTHER"));
        entries.push_back(std::move(e));
    });
    return GazetteerExtractor(std::move(entries), registry);
}

std::vector<RawMention> GazetteerExtractor::extract(const corpus::SentenceRecord& sentence) {
    const std::string lowered = to_lower(sentence.text);
    std::map<Span, std::vector<const GazetteerEntry*>> hits;
    for (const auto& [surface, entries] : by_surface_) {
        std::size_t pos = 0;
        while ((pos = lowered.find(surface, pos)) != std::string::npos) {
            const std::size_t end = pos + surface.size();
            const bool left_ok = pos == 0 || !is_word_char(lowered[pos - 1]);
            const bool right_ok = end == lowered.size() || !is_word_char(lowered[end]);
            if (left_ok && right_ok)
                for (const auto& e : entries) hits[Span{pos, end}].push_back(&e);
            ++pos;
        }
    }

    std::vector<RawMention> out;
    for (const auto& [span, entries] : hits) {  // map order == sorted by start
        const std::string surface = sentence.text.substr(span.start, span.end - span.start);
        std::set<std::pair<Linker, std::string>> distinct;
        for (const auto* e : entries) distinct.emplace(e->linker, e->cui);
        if (distinct.size() == 1) {
            const auto* e = entries.front();
            out.emplace_back(LinkedMention{sentence.sentence_id, span, surface, e->cui, e->semantic_type, e->linker, {}});
            continue;
        }
        CandidateLinkSet set;
        set.sentence_id = sentence.sentence_id;
        set.span = span;
        set.surface = surface;
        for (const auto* e : entries) {
            set.candidates[e->linker].insert(e->cui);
            set.semantic_types.emplace(e->cui, e->semantic_type);
            if (set.predicted_coarse_type == CoarseType::Other) set.predicted_coarse_type = e->coarse_type;
        }
        out.emplace_back(std::move(set));
    }
    return out;
}

// ----------------------------------------------------------------- command

RawMention raw_mention_from_json(const json& j, const corpus::SentenceRecord& sentence) {
    const Span span{j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
    if (!(span.start < span.end && span.end <= sentence.text.size()))
        throw ExtractorError("extractor returned out-of-bounds span");
    const std::string surface = sentence.text.substr(span.start, span.end - span.start);
    if (j.contains("candidates")) {
        CandidateLinkSet set;
        set.sentence_id = sentence.sentence_id;
        set.span = span;
        set.surface = surface;
        for (const auto& [linker, cuis] : j.at("candidates").items())
            for (const auto& cui : cuis) set.candidates[linker_from_string(linker)].insert(cui.get<std::string>());
        if (j.contains("semantic_types"))
            for (const auto& [cui, type] : j.at("semantic_types").items()) set.semantic_types[cui] = type.get<std::string>();
        set.predicted_coarse_type = coarse_type_from_string(j.value("coarse_type", "OTHER"));
        return set;
    }
    return LinkedMention{sentence.sentence_id,
                         span,
                         surface,
                         j.at("cui").get<std::string>(),
                         j.at("semantic_type").get<std::string>(),
                         linker_from_string(j.value("linker", "UMLS")),
                         {}};
}

std::vector<RawMention> CommandExtractor::extract(const corpus::SentenceRecord& sentence) {
    char path_template[] = "/tmp/redkit-sentence-XXXXXX";
    const int fd = mkstemp(path_template);
    if (fd < 0) throw ExtractorError("cannot create temporary file");
    {
        const std::string& text = sentence.text;
        const auto written = ::write(fd, text.data(), text.size());
        ::close(fd);
        if (written != static_cast<ssize_t>(text.size())) {
            std::remove(path_template);
            throw ExtractorError("cannot write temporary file");
        }
    }
    const std::string cmd = command_ + " < '" + path_template + "'";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) {
        std::remove(path_template);
        throw ExtractorError("cannot start extractor: " + command_);
    }
    std::string output;
    std::array<char, 4096> buffer{};
    std::size_t n;
    while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) output.append(buffer.data(), n);
    const int status = ::pclose(pipe);
    std::remove(path_template);
    if (status != 0)
        throw ExtractorError("extractor exited with status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status));

    std::vector<RawMention> out;
    for (const auto& line : split(output, '\n')) {
        if (trim(line).empty()) continue;
        try {
            out.push_back(raw_mention_from_json(json::parse(line), sentence));
        } catch (const json::exception& e) {
            throw ExtractorError(std::string("malformed extractor output: ") + e.what());
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const RawMention& a, const RawMention& b) {
        auto start = [](const RawMention& m) { return std::visit([](const auto& x) { return x.span.start; }, m); };
        return start(a) < start(b);
    });
    return out;
}

ExtractorRegistry& ExtractorRegistry::global() {
    static ExtractorRegistry registry = [] {
        ExtractorRegistry r;
        r.add("gazetteer", [](const ExtractorOptions& o) -> std::unique_ptr<Extractor> {
            if (o.gazetteer.empty()) throw PreconditionError("gazetteer extractor needs a gazetteer file");
            return std::make_unique<GazetteerExtractor>(GazetteerExtractor::from_file(o.gazetteer));
        });
        r.add("command", [](const ExtractorOptions& o) -> std::unique_ptr<Extractor> {
            if (o.command.empty()) throw PreconditionError("command extractor needs a command");
            return std::make_unique<CommandExtractor>(o.command);
        });
        return r;
    }();
    return registry;
}

void ExtractorRegistry::add(const std::string& name, ExtractorFactory factory) { factories_[name] = std::move(factory); }

std::unique_ptr<Extractor> ExtractorRegistry::create(const std::string& name, const ExtractorOptions& options) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) throw PreconditionError("extractor '" + name + "' is not registered");
    return it->second(options);
}

// ---------------------------------------------------------------- priorities

PriorityTable PriorityTable::defaults() {
    using L = Linker;
    PriorityTable t;
    t.set(CoarseType::ChemicalDrug, {L::RXNORM, L::DRUGBANK, L::GS, L::MESH, L::UMLS, L::SNOMED});
    t.set(CoarseType::Disease, {L::MESH, L::SNOMED, L::HPO, L::UMLS});
    t.set(CoarseType::GeneProtein, {L::GO, L::MESH, L::UMLS});
    t.set(CoarseType::Organism, {L::NCBI, L::MESH, L::UMLS});
    t.set(CoarseType::Anatomy, {L::SNOMED, L::MESH, L::UMLS});
    t.set(CoarseType::Other, {L::UMLS, L::MESH, L::SNOMED, L::RXNORM, L::GO, L::HPO, L::NCBI, L::DRUGBANK, L::GS});
    return t;
}

PriorityTable PriorityTable::from_json(const json& j) {
    PriorityTable t = defaults();
    for (const auto& [type, order] : j.items()) {
        std::vector<Linker> linkers;
        for (const auto& l : order) linkers.push_back(linker_from_string(l.get<std::string>()));
        t.set(coarse_type_from_string(type), std::move(linkers));
    }
    return t;
}

json PriorityTable::to_json() const {
    json j = json::object();
    for (const auto& [type, order] : orders_) {
        json arr = json::array();
        for (auto l : order) arr.push_back(to_string(l));
        j[to_string(type)] = arr;
    }
    return j;
}

std::vector<Linker> PriorityTable::order(CoarseType type) const {
    std::vector<Linker> out;
    if (auto it = orders_.find(type); it != orders_.end()) out = it->second;
    for (Linker l : all_linkers())
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
}

std::size_t PriorityTable::rank(Linker linker) const {
    const auto generic = order(CoarseType::Other);
    return static_cast<std::size_t>(std::find(generic.begin(), generic.end(), linker) - generic.begin());
}

LinkedMention resolve_cui(const CandidateLinkSet& c, const PriorityTable& table, const ResolveOptions& options) {
    for (Linker linker : table.order(c.predicted_coarse_type)) {
        auto it = c.candidates.find(linker);
        if (it == c.candidates.end() || it->second.empty()) continue;
        const auto& cuis = it->second;  // std::set: lexicographic order
        std::string chosen = *cuis.begin();
        if (options.tie_break == ResolveOptions::TieBreak::SeededRandom && cuis.size() > 1) {
            std::uint64_t h = fnv1a64(c.sentence_id + "#" + std::to_string(c.span.start) + ":" +
                                      std::to_string(c.span.end), options.seed ^ 0xcbf29ce484222325ULL);
            const std::size_t k = static_cast<std::size_t>(splitmix64(h) % cuis.size());
            chosen = *std::next(cuis.begin(), static_cast<std::ptrdiff_t>(k));
        }
        LinkedMention m;
        m.sentence_id = c.sentence_id;
        m.span = c.span;
        m.surface = c.surface;
        m.cui = chosen;
        m.source_linker = linker;
        if (auto t = c.semantic_types.find(chosen); t != c.semantic_types.end()) m.semantic_type = t->second;
        return m;
    }
    throw UnresolvableError("no linker produced a candidate for '" + c.surface + "'");
}

// ------------------------------------------------------------------- merging

std::vector<LinkedMention> merge_mentions(const std::vector<LinkedMention>& mentions, std::string_view text,
                                          const PriorityTable& table) {
    for (std::size_t i = 1; i < mentions.size(); ++i)
        if (mentions[i].span.start < mentions[i - 1].span.start)
            throw PreconditionError("merge_mentions: input must be sorted by start offset");

    auto note_alt = [](LinkedMention& kept, const LinkedMention& other) {
        auto add = [&](const std::string& t) {
            if (t != kept.semantic_type &&
                std::find(kept.alt_semantic_types.begin(), kept.alt_semantic_types.end(), t) == kept.alt_semantic_types.end())
                kept.alt_semantic_types.push_back(t);
        };
        add(other.semantic_type);
        for (const auto& t : other.alt_semantic_types) add(t);
    };

    std::vector<LinkedMention> out;
    for (const auto& m : mentions) {
        if (m.span.end > text.size() || m.span.start >= m.span.end)
            throw PreconditionError("merge_mentions: span outside sentence");
        if (out.empty()) {
            out.push_back(m);
            continue;
        }
        LinkedMention& cur = out.back();
        bool joinable = m.span.start < cur.span.end;
        if (!joinable) {
            const auto gap = text.substr(cur.span.end, m.span.start - cur.span.end);
            joinable = std::all_of(gap.begin(), gap.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
        }
        if (!joinable) {
            out.push_back(m);
            continue;
        }
        // The containing span keeps its identity; otherwise the head does,
        // unless the tail comes from a strictly preferred linker.
        bool take_tail;
        if (cur.span.contains(m.span)) take_tail = false;
        else if (m.span.contains(cur.span)) take_tail = true;
        else take_tail = table.rank(m.source_linker) < table.rank(cur.source_linker);

        const Span merged{cur.span.start, std::max(cur.span.end, m.span.end)};
        LinkedMention next = take_tail ? m : cur;
        next.alt_semantic_types = take_tail ? m.alt_semantic_types : cur.alt_semantic_types;
        note_alt(next, take_tail ? cur : m);
        next.span = merged;
        cur = std::move(next);
    }
    for (auto& m : out) m.surface = std::string(text.substr(m.span.start, m.span.end - m.span.start));
    return out;
}

SentenceMentions process_sentence(const corpus::SentenceRecord& sentence, Extractor& extractor,
                                  const PriorityTable& table, const ResolveOptions& options) {
    SentenceMentions result;
    result.sentence_id = sentence.sentence_id;
    try {
        std::vector<LinkedMention> resolved;
        for (const auto& raw : extractor.extract(sentence)) {
            if (const auto* linked = std::get_if<LinkedMention>(&raw)) resolved.push_back(*linked);
            else resolved.push_back(resolve_cui(std::get<CandidateLinkSet>(raw), table, options));
        }
        std::stable_sort(resolved.begin(), resolved.end(), [](const LinkedMention& a, const LinkedMention& b) {
            return a.span.start != b.span.start ? a.span.start < b.span.start : a.span.end > b.span.end;
        });
        result.mentions = merge_mentions(resolved, sentence.text, table);
    } catch (const Error& e) {
        result.mentions.clear();
        result.error = e.what();
    } catch (const std::exception& e) {
        result.mentions.clear();
        result.error = e.what();
    }
    return result;
}

std::vector<SentenceMentions> process_corpus(const std::vector<corpus::SentenceRecord>& sentences, Extractor& extractor,
                                             const PriorityTable& table, const ResolveOptions& options,
                                             std::size_t workers) {
    std::vector<SentenceMentions> out(sentences.size());
    workers = std::max<std::size_t>(1, std::min(workers, sentences.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < sentences.size(); ++i) out[i] = process_sentence(sentences[i], extractor, table, options);
        return out;
    }
    // Extractors are not required to be reentrant; workers share one under a lock
    // only for the extract call, resolution and merging run in parallel.
    std::mutex extractor_mutex;
    struct Locked : Extractor {
        Extractor& inner;
        std::mutex& mu;
        Locked(Extractor& e, std::mutex& m) : inner(e), mu(m) {}
        std::string name() const override { return inner.name(); }
        std::vector<RawMention> extract(const corpus::SentenceRecord& s) override {
            std::lock_guard lock(mu);
            return inner.extract(s);
        }
    };
    std::vector<std::future<void>> tasks;
    for (std::size_t w = 0; w < workers; ++w) {
        tasks.push_back(std::async(std::launch::async, [&, w] {
            Locked locked(extractor, extractor_mutex);
            for (std::size_t i = w; i < sentences.size(); i += workers)
                out[i] = process_sentence(sentences[i], locked, table, options);
        }));
    }
    for (auto& t : tasks) t.get();
    return out;
}

// --------------------------------------------------------------- persistence

json to_json(const LinkedMention& m) {
    json j = {{"sentence_id", m.sentence_id}, {"start", m.span.start},         {"end", m.span.end},
              {"surface", m.surface},         {"cui", m.cui},                   {"semantic_type", m.semantic_type},
              {"source_linker", to_string(m.source_linker)}};
    if (!m.alt_semantic_types.empty()) j["alt_semantic_types"] = m.alt_semantic_types;
    return j;
}

LinkedMention mention_from_json(const json& j) {
    LinkedMention m;
    m.sentence_id = j.at("sentence_id").get<std::string>();
    m.span = Span{j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()};
    m.surface = j.at("surface").get<std::string>();
    m.cui = j.at("cui").get<std::string>();
    m.semantic_type = j.at("semantic_type").get<std::string>();
    m.source_linker = linker_from_string(j.value("source_linker", "UMLS"));
    if (j.contains("alt_semantic_types")) m.alt_semantic_types = j.at("alt_semantic_types").get<std::vector<std::string>>();
    return m;
}

void write_mentions(const std::filesystem::path& path, const std::vector<LinkedMention>& mentions) {
    std::vector<json> out;
    for (const auto& m : mentions) out.push_back(to_json(m));
    write_jsonl(path, out);
}

std::vector<LinkedMention> read_mentions(const std::filesystem::path& path) {
    std::vector<LinkedMention> out;
    for_each_jsonl(path, [&](const json& j) { out.push_back(mention_from_json(j)); });
    return out;
}

} // namespace redkit::mentions
