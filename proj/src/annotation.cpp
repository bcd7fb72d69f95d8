#include "redkit/annotation.hpp"

#include <algorithm>

namespace redkit::annotation {

namespace {

const std::vector<std::pair<Action, std::string>>& action_names() {
    static const std::vector<std::pair<Action, std::string>> names{
        {Action::Serve, "SERVE"},
        {Action::Label, "LABEL"},
        {Action::RemoveSentence, "REMOVE_SENTENCE"},
        {Action::RemoveEntity1, "REMOVE_ENTITY_1"},
        {Action::RemoveEntity2, "REMOVE_ENTITY_2"},
        {Action::Feedback, "FEEDBACK"}};
    return names;
}

/// Only the four annotation classes are valid labels.
Label annotation_label(const std::string& payload) {
    Label l;
    try {
        l = dataset::label_from_string(payload);
    } catch (const Error&) {
        throw ValidationError("label outside the four-class space: " + payload);
    }
    if (l == Label::Relation || l == Label::Unlabeled) throw ValidationError("label outside the four-class space: " + payload);
    return l;
}

} // namespace

std::string to_string(Action a) {
    for (const auto& [action, name] : action_names())
        if (action == a) return name;
    return "SERVE";
}

Action action_from_string(const std::string& name) {
    for (const auto& [action, n] : action_names())
        if (n == name) return action;
    throw ValidationError("unknown action: " + name);
}

json to_json(const Event& e) {
    return {{"event_id", e.event_id},       {"annotator_id", e.annotator_id}, {"instance_id", e.instance_id},
            {"action", to_string(e.action)}, {"payload", e.payload},           {"timestamp", e.timestamp}};
}

Event event_from_json(const json& j) {
    Event e;
    e.event_id = j.at("event_id").get<std::uint64_t>();
    e.annotator_id = j.at("annotator_id").get<std::string>();
    e.instance_id = j.at("instance_id").get<std::string>();
    e.action = action_from_string(j.at("action").get<std::string>());
    e.payload = j.value("payload", "");
    e.timestamp = j.value("timestamp", "");
    return e;
}

std::string to_string(Status s) {
    switch (s) {
    case Status::Pending: return "PENDING";
    case Status::Done: return "DONE";
    case Status::Removed: return "REMOVED";
    }
    return "PENDING";
}

std::map<std::string, Context> neighbour_context(const std::vector<corpus::SentenceRecord>& sentences) {
    std::map<std::string, std::map<std::size_t, const corpus::SentenceRecord*>> by_article;
    for (const auto& s : sentences) by_article[s.article_id][s.index] = &s;
    std::map<std::string, Context> out;
    for (const auto& [article, ordered] : by_article) {
        for (auto it = ordered.begin(); it != ordered.end(); ++it) {
            Context c;
            if (it != ordered.begin() && std::prev(it)->first + 1 == it->first) c.before = std::prev(it)->second->text;
            const auto nx = std::next(it);
            if (nx != ordered.end() && nx->first == it->first + 1) c.after = nx->second->text;
            out[it->second->sentence_id] = c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Queue

Queue::Queue(std::vector<RelationInstance> instances, std::vector<std::string> annotators)
    : instances_(std::move(instances)), annotators_(std::move(annotators)) {
    if (annotators_.empty()) throw PreconditionError("at least one annotator is required");
    std::set<std::string> unique(annotators_.begin(), annotators_.end());
    if (unique.size() != annotators_.size()) throw PreconditionError("duplicate annotator id");
    for (std::size_t i = 0; i < instances_.size(); ++i)
        if (!position_.emplace(instances_[i].instance_id, i).second)
            throw PreconditionError("duplicate instance id " + instances_[i].instance_id);
}

void Queue::check_annotator(const std::string& annotator) const {
    if (std::find(annotators_.begin(), annotators_.end(), annotator) == annotators_.end())
        throw AuthError("unknown annotator " + annotator);
}

std::size_t Queue::position(const std::string& instance_id) const {
    const auto it = position_.find(instance_id);
    if (it == position_.end()) throw NotFoundError("unknown instance " + instance_id);
    return it->second;
}

bool Queue::served(const std::string& annotator, std::size_t pos) const {
    const auto it = served_.find(annotator);
    return it != served_.end() && it->second.count(pos);
}

bool Queue::committed(const std::string& annotator, std::size_t pos) const {
    const auto it = committed_.find(annotator);
    return it != committed_.end() && it->second.count(pos);
}

Status Queue::status(std::size_t pos) const {
    if (removed_.count(pos)) return Status::Removed;
    for (const auto& a : annotators_) {
        const auto it = labels_.find(a);
        if (it == labels_.end() || !it->second.count(pos)) return Status::Pending;
    }
    return Status::Done;
}

std::optional<std::size_t> Queue::peek(const std::string& annotator) const {
    check_annotator(annotator);
    for (std::size_t i = 0; i < instances_.size(); ++i)
        if (!removed_.count(i) && !served(annotator, i) && !committed(annotator, i)) return i;
    return std::nullopt;
}

void Queue::validate(const Event& e) const {
    check_annotator(e.annotator_id);
    const std::size_t pos = position(e.instance_id);
    if (e.action == Action::Serve) {
        if (served(e.annotator_id, pos)) throw ConflictError("instance " + e.instance_id + " was already served");
        if (removed_.count(pos)) throw ConflictError("instance " + e.instance_id + " was removed");
        return;
    }
    if (!served(e.annotator_id, pos)) throw ConflictError("instance " + e.instance_id + " was not served to " + e.annotator_id);
    if (e.action == Action::Feedback) {
        if (trim(e.payload).empty()) throw ValidationError("feedback text is empty");
        return;
    }
    if (e.action == Action::Label) annotation_label(e.payload);
    if (committed(e.annotator_id, pos)) throw ConflictError("instance " + e.instance_id + " is already committed");
    if (removed_.count(pos)) throw ConflictError("instance " + e.instance_id + " was removed");
}

void Queue::apply(const Event& e) {
    validate(e);
    const std::size_t pos = position(e.instance_id);
    switch (e.action) {
    case Action::Serve: served_[e.annotator_id].insert(pos); break;
    case Action::Label:
        labels_[e.annotator_id][pos] = annotation_label(e.payload);
        committed_[e.annotator_id].insert(pos);
        break;
    case Action::Feedback: feedback_[pos].push_back(e.payload); break;
    default:
        removed_[pos] = e.action;
        committed_[e.annotator_id].insert(pos);
        break;
    }
}

json Queue::progress(const std::string& annotator) const {
    check_annotator(annotator);
    std::size_t done = 0, removed = removed_.size(), remaining = 0;
    for (std::size_t i = 0; i < instances_.size(); ++i) {
        const auto it = labels_.find(annotator);
        if (it != labels_.end() && it->second.count(i)) ++done;
        else if (!removed_.count(i) && !committed(annotator, i)) ++remaining;
    }
    std::size_t complete = 0;
    for (std::size_t i = 0; i < instances_.size(); ++i)
        if (status(i) == Status::Done) ++complete;
    return {{"annotator", annotator},   {"labelled", done},   {"remaining", remaining},
            {"removed", removed},       {"total", instances_.size()}, {"complete", complete}};
}

json Queue::agreement() const {
    if (annotators_.size() < 2) throw ConflictError("agreement needs at least two annotators");
    const auto& multi = dataset::classes(dataset::LabelSpace::Multiclass);
    std::vector<std::vector<double>> m_counts, b_counts;
    for (std::size_t i = 0; i < instances_.size(); ++i) {
        if (status(i) != Status::Done) continue;
        std::vector<double> m(multi.size(), 0.0), b(2, 0.0);
        for (const auto& a : annotators_) {
            const Label l = labels_.at(a).at(i);
            m[dataset::class_index(l, dataset::LabelSpace::Multiclass)] += 1.0;
            b[dataset::class_index(l, dataset::LabelSpace::Binary)] += 1.0;
        }
        m_counts.push_back(m);
        b_counts.push_back(b);
    }
    if (m_counts.empty()) throw ConflictError("no instance is labelled by every annotator yet");
    return {{"instances", m_counts.size()},
            {"annotators", annotators_.size()},
            {"multiclass", dataset::fleiss_kappa(m_counts)},
            {"binary", dataset::fleiss_kappa(b_counts)}};
}

std::vector<RelationInstance> Queue::export_instances() const {
    std::vector<RelationInstance> out;
    for (std::size_t i = 0; i < instances_.size(); ++i) {
        if (removed_.count(i)) continue;
        RelationInstance inst = instances_[i];
        inst.annotator_labels.clear();
        for (const auto& [annotator, labels] : labels_) {
            const auto it = labels.find(i);
            if (it != labels.end()) inst.annotator_labels[annotator] = it->second;
        }
        inst.label = Label::Unlabeled;
        inst.needs_adjudication = false;
        if (status(i) == Status::Done) {
            const auto vote = dataset::majority_vote(inst.annotator_labels);
            if (vote) inst.label = *vote;
            else inst.needs_adjudication = true;
        }
        const auto fb = feedback_.find(i);
        if (fb != feedback_.end()) {
            std::string note;
            for (const auto& text : fb->second) note += (note.empty() ? "" : "\n") + text;
            inst.context_note = note;
        }
        out.push_back(std::move(inst));
    }
    return out;
}

json Queue::state() const {
    json items = json::array();
    for (std::size_t i = 0; i < instances_.size(); ++i) {
        json item{{"instance_id", instances_[i].instance_id}, {"status", to_string(status(i))}};
        for (const auto& a : annotators_) {
            json per{{"served", served(a, i)}, {"committed", committed(a, i)}};
            const auto it = labels_.find(a);
            if (it != labels_.end() && it->second.count(i)) per["label"] = dataset::to_string(it->second.at(i));
            item["annotators"][a] = per;
        }
        if (removed_.count(i)) item["removed_by"] = to_string(removed_.at(i));
        if (feedback_.count(i)) item["feedback"] = feedback_.at(i);
        items.push_back(item);
    }
    return {{"annotators", annotators_}, {"items", items}};
}

// ---------------------------------------------------------------------------
// Service

ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base) {
    auto path = [&](const std::string& key) {
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_absolute() || base.empty() ? p : base / p;
    };
    ServiceConfig c;
    c.data_dir = path("data_dir");
    c.instances = path("instances");
    if (j.contains("sentences")) c.sentences = path("sentences");
    if (j.contains("ui_dir")) c.ui_dir = path("ui_dir");
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    // "annotators": {"<id>": "<token>"}
    for (const auto& [annotator, token] : j.at("annotators").items()) {
        if (!c.tokens.emplace(token.get<std::string>(), annotator).second)
            throw ParseError("token shared by several annotators");
    }
    if (c.tokens.empty()) throw ParseError("no annotators configured");
    return c;
}

Queue replay(const std::vector<RelationInstance>& instances, const std::vector<std::string>& annotators,
             const std::filesystem::path& log) {
    Queue q(instances, annotators);
    if (std::filesystem::exists(log)) for_each_jsonl(log, [&](const json& j) { q.apply(event_from_json(j)); });
    return q;
}

Service::Service(ServiceConfig config) : config_(std::move(config)) {
    std::vector<std::string> annotators;
    for (const auto& [token, annotator] : config_.tokens) annotators.push_back(annotator);
    std::sort(annotators.begin(), annotators.end());
    std::filesystem::create_directories(config_.data_dir);
    queue_ = std::make_unique<Queue>(replay(dataset::read_instances(config_.instances), annotators, log_path()));
    if (std::filesystem::exists(log_path()))
        for_each_jsonl(log_path(), [&](const json& j) {
            next_event_id_ = std::max(next_event_id_, j.at("event_id").get<std::uint64_t>() + 1);
        });
    if (config_.sentences) context_ = neighbour_context(corpus::read_sentences(*config_.sentences));
    write_json_file(snapshot_path(), queue_->state());
}

std::string Service::authenticate(const std::string& token) const {
    const auto it = config_.tokens.find(token);
    if (it == config_.tokens.end()) throw AuthError("invalid token");
    return it->second;
}

json Service::commit(Event e) {
    e.event_id = next_event_id_;
    e.timestamp = iso8601_now();
    queue_->validate(e);
    append_jsonl(log_path(), to_json(e));
    queue_->apply(e);
    ++next_event_id_;
    write_json_file(snapshot_path(), queue_->state());
    return to_json(e);
}

json Service::next_item(const std::string& annotator) {
    std::lock_guard lock(mutex_);
    const auto pos = queue_->peek(annotator);
    if (!pos) return nullptr;
    const auto& inst = queue_->instances()[*pos];
    commit({0, annotator, inst.instance_id, Action::Serve, "", ""});
    json item{{"instance", dataset::to_json(inst)}, {"context", json::object()}};
    item["instance"]["label"] = nullptr;
    item["instance"].erase("annotator_labels");
    const auto it = context_.find(inst.sentence_id);
    if (it != context_.end()) {
        if (it->second.before) item["context"]["before"] = *it->second.before;
        if (it->second.after) item["context"]["after"] = *it->second.after;
    }
    item["progress"] = queue_->progress(annotator);
    return item;
}

json Service::submit(const std::string& annotator, const std::string& instance_id, Action action,
                     const std::string& payload) {
    if (action == Action::Serve) throw ValidationError("SERVE events are issued by the service");
    std::lock_guard lock(mutex_);
    const json event = commit({0, annotator, instance_id, action, payload, ""});
    return {{"ok", true}, {"event", event}, {"status", to_string(queue_->status(queue_->position(instance_id)))}};
}

json Service::progress(const std::string& annotator) const {
    std::lock_guard lock(mutex_);
    return queue_->progress(annotator);
}

json Service::agreement() const {
    std::lock_guard lock(mutex_);
    return queue_->agreement();
}

std::vector<RelationInstance> Service::export_instances() const {
    std::lock_guard lock(mutex_);
    return queue_->export_instances();
}

void Service::export_to(const std::filesystem::path& path) const {
    dataset::write_instances(path, export_instances());
}

json Service::state() const {
    std::lock_guard lock(mutex_);
    return queue_->state();
}

} // namespace redkit::annotation
