#include "redkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <thread>
#include <unordered_set>

#include <httplib.h>

namespace redkit::corpus {

RateLimiter::RateLimiter(double requests_per_second) {
    if (requests_per_second > 0.0) {
        interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / requests_per_second));
    }
}

void RateLimiter::acquire() {
    if (interval_.count() == 0) return;
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mutex_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_);
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

// ---------------------------------------------------------------- stub source

StubArticleSource::StubArticleSource(std::vector<AbstractRecord> articles) {
    for (auto& a : articles) add(std::move(a));
}

std::unique_ptr<StubArticleSource> StubArticleSource::from_fixture(const std::filesystem::path& fixture) {
    // Either {"articles": [...]} or one article per line.
    auto stub = std::make_unique<StubArticleSource>();
    const std::string body = read_text_file(fixture);
    std::vector<json> items;
    const auto first = body.find_first_not_of(" \t\r\n");
    bool is_object = false;
    if (first != std::string::npos && body[first] == '{') {
        try {
            json doc = json::parse(body);
            if (doc.contains("articles")) {
                items = doc.at("articles").get<std::vector<json>>();
                is_object = true;
            }
        } catch (const json::parse_error&) {
        }
    }
    if (!is_object) items = read_jsonl(fixture);
    for (const auto& j : items) stub->add(abstract_from_json(j));
    return stub;
}

void StubArticleSource::add(AbstractRecord record) {
    std::lock_guard lock(mutex_);
    if (!articles_.count(record.article_id)) order_.push_back(record.article_id);
    articles_[record.article_id] = std::move(record);
}

void StubArticleSource::maybe_fail() {
    if (pending_failures_ > 0) {
        --pending_failures_;
        throw TransportError("stub: injected transport failure", 1);
    }
}

std::vector<std::string> StubArticleSource::search(const std::string&, std::size_t offset, std::size_t limit) {
    std::lock_guard lock(mutex_);
    ++search_calls_;
    maybe_fail();
    if (corrupt_) throw ParseError("stub: malformed search response");
    std::vector<std::string> page;
    for (std::size_t i = offset; i < order_.size() && page.size() < limit; ++i) page.push_back(order_[i]);
    return page;
}

std::vector<AbstractRecord> StubArticleSource::fetch(const std::vector<std::string>& ids) {
    std::lock_guard lock(mutex_);
    maybe_fail();
    std::vector<AbstractRecord> out;
    for (const auto& id : ids) {
        auto it = articles_.find(id);
        if (it != articles_.end()) out.push_back(it->second);
    }
    return out;
}

// -------------------------------------------------------------- entrez source

EntrezSource::EntrezSource(Options options)
    : options_(std::move(options)), limiter_(options_.requests_per_second) {}

std::string EntrezSource::get(const std::string& path) {
    limiter_.acquire();
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout_seconds);
    client.set_read_timeout(options_.timeout_seconds);
    auto res = client.Get(path);
    if (!res) throw TransportError("GET " + path + " failed: " + httplib::to_string(res.error()), 1);
    if (res->status >= 500 || res->status == 429)
        throw TransportError("GET " + path + " returned HTTP " + std::to_string(res->status), 1);
    if (res->status != 200)
        throw ParseError("GET " + path + " returned HTTP " + std::to_string(res->status));
    return res->body;
}

std::vector<std::string> EntrezSource::search(const std::string& query, std::size_t offset, std::size_t limit) {
    const std::string path = options_.path_prefix + "/esearch.fcgi?db=" + options_.database +
                             "&retmode=json&retstart=" + std::to_string(offset) +
                             "&retmax=" + std::to_string(limit) + "&term=" + httplib::detail::encode_query_param(query);
    return parse_esearch_json(get(path));
}

std::vector<AbstractRecord> EntrezSource::fetch(const std::vector<std::string>& ids) {
    std::string joined;
    for (const auto& id : ids) {
        if (!joined.empty()) joined += ',';
        joined += id;
    }
    const std::string path = options_.path_prefix + "/efetch.fcgi?db=" + options_.database +
                             "&retmode=xml&rettype=abstract&id=" + joined;
    return parse_pubmed_xml(get(path));
}

std::vector<std::string> parse_esearch_json(const std::string& body) {
    try {
        const json doc = json::parse(body);
        std::vector<std::string> ids;
        for (const auto& id : doc.at("esearchresult").at("idlist")) ids.push_back(id.get<std::string>());
        return ids;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed esearch response: ") + e.what());
    }
}

namespace {

std::string decode_entities(std::string s) {
    static const std::pair<const char*, const char*> table[] = {
        {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&apos;", "'"}, {"&amp;", "&"}};
    for (const auto& [from, to] : table) {
        std::size_t pos = 0;
        const std::string f(from);
        while ((pos = s.find(f, pos)) != std::string::npos) {
            s.replace(pos, f.size(), to);
            pos += std::char_traits<char>::length(to);
        }
    }
    return s;
}

std::string strip_tags(const std::string& s) {
    std::string out;
    bool in_tag = false;
    for (char c : s) {
        if (c == '<') in_tag = true;
        else if (c == '>') in_tag = false;
        else if (!in_tag) out += c;
    }
    return out;
}

// Inner text of every non-nested <tag ...>...</tag> element.
std::vector<std::string> element_blocks(const std::string& xml, const std::string& tag) {
    std::vector<std::string> out;
    const std::string open = "<" + tag;
    const std::string close = "</" + tag + ">";
    std::size_t pos = 0;
    while ((pos = xml.find(open, pos)) != std::string::npos) {
        const std::size_t after = pos + open.size();
        if (after >= xml.size() || (xml[after] != '>' && !std::isspace(static_cast<unsigned char>(xml[after])))) {
            pos = after;
            continue;
        }
        const std::size_t body = xml.find('>', after);
        if (body == std::string::npos) break;
        const std::size_t end = xml.find(close, body);
        if (end == std::string::npos) throw ParseError("malformed efetch response: unclosed <" + tag + ">");
        out.push_back(xml.substr(body + 1, end - body - 1));
        pos = end + close.size();
    }
    return out;
}

std::vector<std::string> element_texts(const std::string& xml, const std::string& tag) {
    std::vector<std::string> out;
    for (const auto& block : element_blocks(xml, tag)) out.push_back(trim(decode_entities(strip_tags(block))));
    return out;
}

} // namespace

std::vector<AbstractRecord> parse_pubmed_xml(const std::string& body) {
    if (body.find("<PubmedArticleSet") == std::string::npos)
        throw ParseError("malformed efetch response: no PubmedArticleSet");
    std::vector<AbstractRecord> out;
    const std::string now = iso8601_now();
    for (const auto& article : element_blocks(body, "PubmedArticle")) {
        auto pmids = element_texts(article, "PMID");
        if (pmids.empty()) throw ParseError("malformed efetch response: article without PMID");
        AbstractRecord r;
        r.article_id = pmids.front();
        auto titles = element_texts(article, "ArticleTitle");
        if (!titles.empty()) r.title = titles.front();
        for (const auto& part : element_texts(article, "AbstractText")) {
            if (part.empty()) continue;
            if (!r.abstract.empty()) r.abstract += ' ';
            r.abstract += part;
        }
        r.retrieved_at = now;
        out.push_back(std::move(r));
    }
    return out;
}

// -------------------------------------------------------------------- fetching

namespace {

template <typename Fn>
auto with_retry(const RetryPolicy& retry, Fn&& fn) -> decltype(fn()) {
    int attempt = 0;
    while (true) {
        ++attempt;
        try {
            return fn();
        } catch (const TransportError& e) {
            if (attempt >= retry.max_attempts)
                throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)",
                                     attempt);
            if (retry.backoff.count() > 0) std::this_thread::sleep_for(retry.backoff * attempt);
        }
    }
}

} // namespace

std::vector<std::string> fetch_article_ids(ArticleSource& source, const std::string& query,
                                           std::size_t page_limit, const RetryPolicy& retry) {
    if (trim(query).empty()) throw PreconditionError("fetch_article_ids: query must be non-empty");
    if (page_limit == 0) throw PreconditionError("fetch_article_ids: page_limit must be positive");

    std::vector<std::string> ids;
    std::unordered_set<std::string> seen;
    std::size_t offset = 0;
    while (true) {
        auto page = with_retry(retry, [&] { return source.search(query, offset, page_limit); });
        if (page.size() > page_limit) throw ParseError("fetch_article_ids: page larger than requested");
        for (auto& id : page) {
            if (id.empty()) throw ParseError("fetch_article_ids: empty id in response");
            if (seen.insert(id).second) ids.push_back(std::move(id));
        }
        if (page.size() < page_limit) break;
        offset += page_limit;
    }
    return ids;
}

FetchResult fetch_abstracts(ArticleSource& source, const std::vector<std::string>& ids,
                            const FetchOptions& options) {
    if (ids.empty()) throw PreconditionError("fetch_abstracts: id list must be non-empty");
    if (options.batch_size == 0) throw PreconditionError("fetch_abstracts: batch_size must be positive");

    std::vector<std::string> unique;
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
        if (seen.insert(id).second) unique.push_back(id);

    std::vector<std::vector<std::string>> batches;
    for (std::size_t i = 0; i < unique.size(); i += options.batch_size)
        batches.emplace_back(unique.begin() + static_cast<std::ptrdiff_t>(i),
                             unique.begin() + static_cast<std::ptrdiff_t>(std::min(unique.size(), i + options.batch_size)));

    struct BatchOutcome {
        std::vector<AbstractRecord> records;
        std::optional<FetchFailure> failure;
    };
    auto run_batch = [&](const std::vector<std::string>& batch) {
        BatchOutcome outcome;
        try {
            outcome.records = with_retry(options.retry, [&] { return source.fetch(batch); });
        } catch (const TransportError& e) {
            outcome.failure = FetchFailure{batch, e.what(), e.attempts()};
        } catch (const Error& e) {
            outcome.failure = FetchFailure{batch, e.what(), 1};
        }
        return outcome;
    };

    std::vector<BatchOutcome> outcomes(batches.size());
    const std::size_t workers = std::max<std::size_t>(1, options.workers);
    for (std::size_t start = 0; start < batches.size(); start += workers) {
        std::vector<std::future<BatchOutcome>> inflight;
        for (std::size_t b = start; b < std::min(batches.size(), start + workers); ++b)
            inflight.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, run_batch,
                                          std::cref(batches[b])));
        for (std::size_t k = 0; k < inflight.size(); ++k) outcomes[start + k] = inflight[k].get();
    }

    FetchResult result;
    std::set<std::string> with_abstract;
    for (auto& outcome : outcomes) {
        if (outcome.failure) {
            result.failures.push_back(std::move(*outcome.failure));
            continue;
        }
        for (auto& r : outcome.records) {
            if (!seen.count(r.article_id) || with_abstract.count(r.article_id)) continue;
            if (trim(r.abstract).empty()) continue;
            if (r.retrieved_at.empty()) r.retrieved_at = iso8601_now();
            with_abstract.insert(r.article_id);
            result.records.push_back(std::move(r));
        }
    }
    std::set<std::string> failed;
    for (const auto& f : result.failures) failed.insert(f.ids.begin(), f.ids.end());
    for (const auto& id : unique)
        if (!with_abstract.count(id) && !failed.count(id)) result.skipped.push_back(id);
    std::sort(result.records.begin(), result.records.end(),
              [](const AbstractRecord& a, const AbstractRecord& b) { return a.article_id < b.article_id; });
    return result;
}

// ------------------------------------------------------------ sentence splitter

const std::set<std::string>& SentenceSplitter::default_abbreviations() {
    static const std::set<std::string> abbreviations = {
        "e.g", "i.e", "etc", "al", "vs", "viz", "cf", "fig", "figs", "ref", "refs", "eq", "eqs",
        "approx", "ca", "vol", "resp", "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "inc", "ltd",
        "dept", "univ", "sp", "spp", "subsp", "ssp", "suppl", "incl", "ph.d", "m.d", "u.s", "u.k", "n.b"};
    return abbreviations;
}

SentenceSplitter::SentenceSplitter() : abbreviations_(default_abbreviations()) {}

SentenceSplitter::SentenceSplitter(std::set<std::string> abbreviations) : abbreviations_(std::move(abbreviations)) {}

bool SentenceSplitter::is_abbreviation(std::string_view text, std::size_t period_pos) const {
    // Word immediately preceding the period, including internal periods ("e.g").
    std::size_t b = period_pos;
    while (b > 0) {
        const unsigned char c = static_cast<unsigned char>(text[b - 1]);
        if (std::isalnum(c) || c == '.') --b;
        else break;
    }
    std::string word = to_lower(text.substr(b, period_pos - b));
    if (word.empty()) return false;
    if (abbreviations_.count(word)) return true;
    // "et al." style two-word abbreviations
    if (word == "al" && b >= 3 && to_lower(text.substr(b - 3, 3)) == "et ") return true;
    return false;
}

std::vector<std::pair<std::size_t, std::size_t>> SentenceSplitter::split_ranges(std::string_view text) const {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    auto push = [&](std::size_t b, std::size_t e) {
        while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
        if (b < e) ranges.emplace_back(b, e);
    };

    std::size_t start = 0;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t j = i + 1;
        while (j < n && (text[j] == '"' || text[j] == '\'' || text[j] == ')' || text[j] == ']')) ++j;
        if (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) continue;  // "3.5", "e.g.x"
        std::size_t k = j;
        while (k < n && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k >= n) break;
        const unsigned char next = static_cast<unsigned char>(text[k]);
        const bool opens_sentence = std::isupper(next) || std::isdigit(next) || next == '(' || next == '[' ||
                                    next == '"' || next >= 0x80;
        if (!opens_sentence) continue;
        if (c == '.' && is_abbreviation(text, i)) continue;
        push(start, j);
        start = j;
    }
    push(start, n);
    return ranges;
}

std::vector<std::string> SentenceSplitter::split(std::string_view text) const {
    std::vector<std::string> out;
    for (auto [b, e] : split_ranges(text)) out.emplace_back(text.substr(b, e - b));
    return out;
}

std::string make_sentence_id(const std::string& article_id, std::size_t index) {
    return article_id + "_" + std::to_string(index);
}

std::vector<SentenceRecord> split_sentences(const AbstractRecord& record, const SentenceSplitter& splitter) {
    if (trim(record.abstract).empty()) throw PreconditionError("split_sentences: abstract is empty");
    std::vector<SentenceRecord> out;
    auto ranges = splitter.split_ranges(record.abstract);
    if (ranges.empty()) ranges.emplace_back(0, record.abstract.size());
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        SentenceRecord s;
        s.article_id = record.article_id;
        s.index = i;
        s.sentence_id = make_sentence_id(record.article_id, i);
        s.text = record.abstract.substr(ranges[i].first, ranges[i].second - ranges[i].first);
        s.char_length = s.text.size();
        out.push_back(std::move(s));
    }
    return out;
}

// ----------------------------------------------------------------- persistence

json to_json(const AbstractRecord& r) {
    return {{"article_id", r.article_id}, {"title", r.title}, {"abstract", r.abstract}, {"retrieved_at", r.retrieved_at}};
}

json to_json(const SentenceRecord& s) {
    return {{"article_id", s.article_id}, {"sentence_id", s.sentence_id}, {"text", s.text}};
}

AbstractRecord abstract_from_json(const json& j) {
    AbstractRecord r;
    r.article_id = j.at("article_id").get<std::string>();
    r.title = j.value("title", "");
    r.abstract = j.value("abstract", "");
    r.retrieved_at = j.value("retrieved_at", "");
    if (r.article_id.empty()) throw ParseError("abstract record with empty article_id");
    return r;
}

SentenceRecord sentence_from_json(const json& j) {
    SentenceRecord s;
    s.sentence_id = j.at("sentence_id").get<std::string>();
    s.article_id = j.at("article_id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    s.char_length = s.text.size();
    const auto pos = s.sentence_id.rfind('_');
    if (pos != std::string::npos) {
        try {
            s.index = std::stoul(s.sentence_id.substr(pos + 1));
        } catch (const std::exception&) {
            s.index = 0;
        }
    }
    return s;
}

void write_abstracts(const std::filesystem::path& path, const std::vector<AbstractRecord>& records) {
    std::vector<json> out;
    for (const auto& r : records) out.push_back(to_json(r));
    write_jsonl(path, out);
}

std::vector<AbstractRecord> read_abstracts(const std::filesystem::path& path) {
    std::vector<AbstractRecord> out;
    for_each_jsonl(path, [&](const json& j) { out.push_back(abstract_from_json(j)); });
    return out;
}

void write_sentences(const std::filesystem::path& path, const std::vector<SentenceRecord>& sentences) {
    std::vector<json> out;
    for (const auto& s : sentences) out.push_back(to_json(s));
    write_jsonl(path, out);
}

std::vector<SentenceRecord> read_sentences(const std::filesystem::path& path) {
    std::vector<SentenceRecord> out;
    for_each_jsonl(path, [&](const json& j) { out.push_back(sentence_from_json(j)); });
    return out;
}

} // namespace redkit::corpus
