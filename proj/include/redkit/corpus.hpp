#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "redkit/util.hpp"

namespace redkit::corpus {

struct AbstractRecord {
    std::string article_id;
    std::string title;
    std::string abstract;
    std::string retrieved_at;
};

struct SentenceRecord {
    std::string sentence_id;
    std::string article_id;
    std::size_t index = 0;
    std::string text;
    /// Length in bytes of the UTF-8 text.
    std::size_t char_length = 0;
};

/// Raised when a request could not be completed; callers may retry.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts) : Error(what), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

/// Remote literature service. Implementations must be safe to call from
/// several threads at once.
class ArticleSource {
public:
    virtual ~ArticleSource() = default;
    /// One page of ids for `query`, starting at `offset`, at most `limit` long.
    virtual std::vector<std::string> search(const std::string& query, std::size_t offset,
                                            std::size_t limit) = 0;
    /// Records for the ids that exist; an empty abstract means "no abstract".
    virtual std::vector<AbstractRecord> fetch(const std::vector<std::string>& ids) = 0;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds backoff{0};
};

/// Enforces a minimum spacing between outgoing requests.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_second = 0.0);
    void acquire();

private:
    std::mutex mutex_;
    std::chrono::steady_clock::duration interval_{};
    std::chrono::steady_clock::time_point next_{};
};

/// In-memory source used by tests and by `ingest --stub`.
class StubArticleSource : public ArticleSource {
public:
    StubArticleSource() = default;
    explicit StubArticleSource(std::vector<AbstractRecord> articles);
    static std::unique_ptr<StubArticleSource> from_fixture(const std::filesystem::path& fixture);

    void add(AbstractRecord record);
    /// The next `n` calls (search or fetch) throw TransportError.
    void fail_next(int n) { pending_failures_ = n; }
    /// Searches return a malformed page.
    void corrupt_search(bool corrupt) { corrupt_ = corrupt; }
    std::size_t search_calls() const { return search_calls_; }

    std::vector<std::string> search(const std::string& query, std::size_t offset, std::size_t limit) override;
    std::vector<AbstractRecord> fetch(const std::vector<std::string>& ids) override;

private:
    void maybe_fail();

    std::mutex mutex_;
    std::vector<std::string> order_;
    std::map<std::string, AbstractRecord> articles_;
    int pending_failures_ = 0;
    bool corrupt_ = false;
    std::size_t search_calls_ = 0;
};

/// NCBI E-utilities style client (esearch JSON, efetch XML) over HTTP.
class EntrezSource : public ArticleSource {
public:
    struct Options {
        std::string base_url = "https://eutils.ncbi.nlm.nih.gov";
        std::string path_prefix = "/entrez/eutils";
        std::string database = "pubmed";
        double requests_per_second = 3.0;
        int timeout_seconds = 30;
    };

    explicit EntrezSource(Options options);

    std::vector<std::string> search(const std::string& query, std::size_t offset, std::size_t limit) override;
    std::vector<AbstractRecord> fetch(const std::vector<std::string>& ids) override;

private:
    std::string get(const std::string& path);

    Options options_;
    RateLimiter limiter_;
};

/// Parses an esearch JSON body into its id list.
std::vector<std::string> parse_esearch_json(const std::string& body);
/// Parses an efetch PubMed XML body into abstract records.
std::vector<AbstractRecord> parse_pubmed_xml(const std::string& body);

/// Pages through `query` until a short page arrives. Ids are deduplicated and
/// keep first-seen order.
std::vector<std::string> fetch_article_ids(ArticleSource& source, const std::string& query,
                                           std::size_t page_limit, const RetryPolicy& retry = {});

struct FetchFailure {
    std::vector<std::string> ids;
    std::string error;
    int attempts = 0;
};

struct FetchResult {
    std::vector<AbstractRecord> records;   // sorted by article_id
    std::vector<std::string> skipped;      // ids without an abstract
    std::vector<FetchFailure> failures;    // batches that never succeeded
};

struct FetchOptions {
    std::size_t batch_size = 200;
    std::size_t workers = 1;
    RetryPolicy retry{};
};

FetchResult fetch_abstracts(ArticleSource& source, const std::vector<std::string>& ids,
                            const FetchOptions& options = {});

/// Rule-based splitter that knows common biomedical abbreviations.
class SentenceSplitter {
public:
    SentenceSplitter();
    explicit SentenceSplitter(std::set<std::string> abbreviations);

    /// Byte ranges [begin, end) of the sentences of `text`, whitespace-trimmed.
    std::vector<std::pair<std::size_t, std::size_t>> split_ranges(std::string_view text) const;
    std::vector<std::string> split(std::string_view text) const;

    static const std::set<std::string>& default_abbreviations();

private:
    bool is_abbreviation(std::string_view text, std::size_t period_pos) const;

    std::set<std::string> abbreviations_;
};

std::string make_sentence_id(const std::string& article_id, std::size_t index);

std::vector<SentenceRecord> split_sentences(const AbstractRecord& record,
                                            const SentenceSplitter& splitter = SentenceSplitter());

json to_json(const AbstractRecord& r);
json to_json(const SentenceRecord& s);
AbstractRecord abstract_from_json(const json& j);
SentenceRecord sentence_from_json(const json& j);

void write_abstracts(const std::filesystem::path& path, const std::vector<AbstractRecord>& records);
std::vector<AbstractRecord> read_abstracts(const std::filesystem::path& path);
void write_sentences(const std::filesystem::path& path, const std::vector<SentenceRecord>& sentences);
std::vector<SentenceRecord> read_sentences(const std::filesystem::path& path);

} // namespace redkit::corpus
