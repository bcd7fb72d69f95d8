#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "redkit/corpus.hpp"
#include "redkit/dataset.hpp"

namespace redkit::annotation {

using dataset::Label;
using dataset::RelationInstance;

/// SERVE records that an item was handed out, so a replay restores cursors.
enum class Action { Serve, Label, RemoveSentence, RemoveEntity1, RemoveEntity2, Feedback };

std::string to_string(Action a);
Action action_from_string(const std::string& name);

struct Event {
    std::uint64_t event_id = 0;
    std::string annotator_id;
    std::string instance_id;
    Action action = Action::Serve;
    std::string payload;  // label name, feedback text, or empty
    std::string timestamp;
};

json to_json(const Event& e);
Event event_from_json(const json& j);

enum class Status { Pending, Done, Removed };
std::string to_string(Status s);

/// Unknown annotator or token.
class AuthError : public Error {
public:
    using Error::Error;
};
/// Malformed request, e.g. a label outside the four-class space.
class ValidationError : public Error {
public:
    using Error::Error;
};
/// Request conflicting with committed state, e.g. a second LABEL.
class ConflictError : public Error {
public:
    using Error::Error;
};
class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Neighbouring sentences shown as extra context.
struct Context {
    std::optional<std::string> before;
    std::optional<std::string> after;
};

/// ±1 neighbours of every sentence, keyed by sentence id.
std::map<std::string, Context> neighbour_context(const std::vector<corpus::SentenceRecord>& sentences);

/// Work-queue state rebuilt purely from events; performs no I/O.
class Queue {
public:
    Queue(std::vector<RelationInstance> instances, std::vector<std::string> annotators);

    /// Lowest queue position that is not removed, not served to and not
    /// committed by `annotator`; does not mark it served.
    std::optional<std::size_t> peek(const std::string& annotator) const;
    /// Throws without changing state if the event is not admissible.
    void validate(const Event& e) const;
    void apply(const Event& e);

    const std::vector<RelationInstance>& instances() const { return instances_; }
    const std::vector<std::string>& annotators() const { return annotators_; }
    std::size_t position(const std::string& instance_id) const;
    /// DONE once every annotator labelled it; REMOVED is global.
    Status status(std::size_t position) const;
    bool served(const std::string& annotator, std::size_t position) const;
    bool committed(const std::string& annotator, std::size_t position) const;

    json progress(const std::string& annotator) const;
    /// Fleiss' kappa in both label spaces over instances labelled by every annotator.
    json agreement() const;
    /// Non-removed instances with annotator labels; fully labelled instances get
    /// the strict-majority label or, on a tie, needs_adjudication.
    std::vector<RelationInstance> export_instances() const;
    /// Canonical state for replay comparisons.
    json state() const;

private:
    void check_annotator(const std::string& annotator) const;

    std::vector<RelationInstance> instances_;
    std::vector<std::string> annotators_;
    std::map<std::string, std::size_t> position_;
    std::map<std::string, std::set<std::size_t>> served_;
    std::map<std::string, std::map<std::size_t, Label>> labels_;
    std::map<std::string, std::set<std::size_t>> committed_;
    std::map<std::size_t, Action> removed_;
    std::map<std::size_t, std::vector<std::string>> feedback_;
};

struct ServiceConfig {
    std::filesystem::path data_dir;       // holds events.jsonl and state.json
    std::filesystem::path instances;      // instances.jsonl to annotate
    std::optional<std::filesystem::path> sentences;  // sentences.jsonl for context
    std::map<std::string, std::string> tokens;       // token -> annotator id
    std::optional<std::filesystem::path> ui_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
};

ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base = {});

/// Durable annotation service: every accepted event is appended to the log
/// before it is applied, mutations are serialized by one mutex.
class Service {
public:
    explicit Service(ServiceConfig config);

    /// Annotator id of a token.
    std::string authenticate(const std::string& token) const;

    /// Next item with context, or null when the annotator's queue is empty.
    json next_item(const std::string& annotator);
    json submit(const std::string& annotator, const std::string& instance_id, Action action, const std::string& payload);
    json progress(const std::string& annotator) const;
    json agreement() const;
    std::vector<RelationInstance> export_instances() const;
    void export_to(const std::filesystem::path& path) const;
    json state() const;

    const ServiceConfig& config() const { return config_; }
    std::filesystem::path log_path() const { return config_.data_dir / "events.jsonl"; }
    std::filesystem::path snapshot_path() const { return config_.data_dir / "state.json"; }

private:
    json commit(Event e);

    ServiceConfig config_;
    std::unique_ptr<Queue> queue_;
    std::map<std::string, Context> context_;
    std::uint64_t next_event_id_ = 1;
    mutable std::mutex mutex_;
};

/// Rebuilds queue state from a log without touching it.
Queue replay(const std::vector<RelationInstance>& instances, const std::vector<std::string>& annotators,
             const std::filesystem::path& log);

} // namespace redkit::annotation
