// SPDX-License-Identifier: Apache-2.0
#include "evomoe/config.hpp"

#include "evomoe/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace evomoe {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ConfigError(what);
}

// Reads the keys of one JSON object and rejects anything it was not asked about.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        require(j_.is_object(), where_ + ": expected an object");
    }
    ~ObjectReader() noexcept(false)
    {
        if (std::uncaught_exceptions() > 0)
            return;
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError(where_ + ": unknown key '" + key + "'");
    }

    const json* find(const std::string& key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void size(const std::string& key, std::size_t& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number_integer() && v->get<std::int64_t>() >= 0,
                    where_ + "." + key + ": expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void u64(const std::string& key, std::uint64_t& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0),
                    where_ + "." + key + ": expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void i64(const std::string& key, std::int64_t& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number_integer(), where_ + "." + key + ": expected an integer");
            out = v->get<std::int64_t>();
        }
    }
    void real(const std::string& key, double& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number(), where_ + "." + key + ": expected a number");
            out = v->get<double>();
        }
    }
    void boolean(const std::string& key, bool& out)
    {
        if (const json* v = find(key)) {
            require(v->is_boolean(), where_ + "." + key + ": expected true or false");
            out = v->get<bool>();
        }
    }
    std::string path(const std::string& key) const { return where_ + "." + key; }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

RouterKind parse_router_kind(const json& v)
{
    require(v.is_string(), "model.router_kind: expected a string");
    const auto s = v.get<std::string>();
    if (s == "linear")
        return RouterKind::linear;
    if (s == "dtr")
        return RouterKind::dtr;
    throw ConfigError("model.router_kind: unknown value '" + s + "' (expected linear or dtr)");
}

Placement parse_placement(const json& v)
{
    require(v.is_string(), "model.moe_placement: expected a string");
    const auto s = v.get<std::string>();
    if (s == "alternating")
        return Placement::alternating;
    if (s == "all")
        return Placement::all;
    if (s == "none")
        return Placement::none;
    throw ConfigError("model.moe_placement: unknown value '" + s +
                      "' (expected alternating, all or none)");
}

void read_rule(ObjectReader& parent, const std::string& key, AffineRule& rule)
{
    if (const json* v = parent.find(key)) {
        ObjectReader r(*v, parent.path(key));
        r.i64("mul", rule.mul);
        r.i64("add", rule.add);
    }
}

void read_model(const json& j, ModelConfig& m)
{
    ObjectReader r(j, "model");
    r.size("vocab_size", m.vocab_size);
    r.size("d_model", m.d_model);
    r.size("n_layers", m.n_layers);
    r.size("n_heads", m.n_heads);
    r.size("ffn_hidden", m.ffn_hidden);
    r.size("n_experts", m.n_experts);
    r.size("top_k", m.top_k);
    if (const json* v = r.find("router_kind"))
        m.router_kind = parse_router_kind(*v);
    if (const json* v = r.find("moe_placement"))
        m.moe_placement = parse_placement(*v);
    r.boolean("skip_first_moe_layer", m.skip_first_moe_layer);
    r.boolean("shared_expert", m.shared_expert);
    r.size("dtr_rank", m.dtr_rank);
    r.size("hypernet_hidden", m.hypernet_hidden);
    r.size("max_seq_len", m.max_seq_len);
    if (const json* v = r.find("beta_ranges")) {
        require(v->is_array(), "model.beta_ranges: expected an array of [lo, hi] pairs");
        m.beta_ranges.clear();
        for (const auto& pair : *v) {
            require(pair.is_array() && pair.size() == 2 && pair[0].is_number() &&
                        pair[1].is_number(),
                    "model.beta_ranges: each entry must be [lo, hi]");
            m.beta_ranges.push_back({pair[0].get<double>(), pair[1].get<double>()});
        }
    }
}

void read_task(const json& j, TaskSpec& t)
{
    ObjectReader r(j, "task");
    r.size("vocab_a", t.vocab_a);
    r.size("vocab_b", t.vocab_b);
    read_rule(r, "rule_a", t.rule_a);
    read_rule(r, "rule_b", t.rule_b);
    r.size("prefix_len", t.prefix_len);
    r.size("suffix_len", t.suffix_len);
}

void read_stage(const json& j, const std::string& where, StageConfig& s)
{
    ObjectReader r(j, where);
    r.size("steps", s.steps);
    r.size("batch_size", s.batch_size);
    r.real("learning_rate", s.learning_rate);
    r.size("eval_every", s.eval_every);
    r.boolean("evolve", s.evolve);
}

json rule_json(const AffineRule& rule) { return {{"mul", rule.mul}, {"add", rule.add}}; }

json stage_json(const StageConfig& s)
{
    return {{"steps", s.steps},
            {"batch_size", s.batch_size},
            {"learning_rate", s.learning_rate},
            {"eval_every", s.eval_every},
            {"evolve", s.evolve}};
}

}  // namespace

void ModelConfig::validate() const
{
    require(vocab_size > 0, "model.vocab_size must be positive");
    require(d_model > 0, "model.d_model must be positive");
    require(n_layers > 0, "model.n_layers must be positive");
    require(n_heads > 0 && d_model % n_heads == 0, "model.n_heads must divide d_model");
    require(ffn_hidden > 0, "model.ffn_hidden must be positive");
    require(n_experts >= 1, "model.n_experts must be at least 1");
    require(top_k >= 1 && top_k <= n_experts, "model.top_k must lie in [1, n_experts]");
    require(dtr_rank > 0 && dtr_rank % 2 == 0, "model.dtr_rank must be a positive even number");
    require(hypernet_hidden > 0, "model.hypernet_hidden must be positive");
    require(max_seq_len > 0, "model.max_seq_len must be positive");
    require(beta_ranges.size() == n_experts - 1,
            "model.beta_ranges must hold n_experts - 1 = " + std::to_string(n_experts - 1) +
                " ranges, got " + std::to_string(beta_ranges.size()));
    for (const auto& r : beta_ranges)
        require(0.0 <= r.lo && r.lo <= r.hi && r.hi <= 1.0,
                "model.beta_ranges entries need 0 <= lo <= hi <= 1");
}

std::vector<std::size_t> ModelConfig::moe_layers() const
{
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < n_layers; ++l) {
        bool moe = false;
        switch (moe_placement) {
        case Placement::alternating: moe = l % 2 == 0; break;
        case Placement::all: moe = true; break;
        case Placement::none: moe = false; break;
        }
        if (moe && l == 0 && skip_first_moe_layer)
            moe = false;
        if (moe)
            out.push_back(l);
    }
    return out;
}

void TaskSpec::validate() const
{
    require(vocab_a > 0 && vocab_b > 0, "task vocabularies must be non-empty");
    require(prefix_len > 0 && suffix_len > 0, "task.prefix_len and task.suffix_len must be positive");
}

RunConfig::RunConfig()
{
    stages[0] = {400, 16, 1e-3, 50, true};
    stages[1] = {200, 16, 1e-3, 50, true};
    stages[2] = {200, 16, 1e-3, 50, true};
}

void RunConfig::validate() const
{
    model.validate();
    task.validate();
    require(model.vocab_size == task.vocab_a + task.vocab_b,
            "model.vocab_size must equal task.vocab_a + task.vocab_b");
    require(task.seq_len() <= model.max_seq_len,
            "task.prefix_len + task.suffix_len exceeds model.max_seq_len");
    require(alpha >= 0.0, "alpha must be non-negative");
    require(eval_batches > 0 && eval_batch_size > 0, "eval_batches and eval_batch_size must be positive");
    for (int s = 1; s <= 3; ++s) {
        const auto& st = stage(s);
        const std::string where = "stages." + std::to_string(s);
        require(st.steps > 0, where + ".steps must be positive");
        require(st.batch_size > 0, where + ".batch_size must be positive");
        require(st.learning_rate > 0.0, where + ".learning_rate must be positive");
        require(st.eval_every > 0, where + ".eval_every must be positive");
    }
}

const StageConfig& RunConfig::stage(int s) const
{
    if (s < 1 || s > 3)
        throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(s));
    return stages[static_cast<std::size_t>(s - 1)];
}

StageConfig& RunConfig::stage(int s)
{
    return const_cast<StageConfig&>(static_cast<const RunConfig&>(*this).stage(s));
}

RunConfig parse_config(const std::string& json_text)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    {
        ObjectReader r(j, "config");
        r.u64("seed", c.seed);
        r.real("alpha", c.alpha);
        r.size("eval_batches", c.eval_batches);
        r.size("eval_batch_size", c.eval_batch_size);
        if (const json* v = r.find("model"))
            read_model(*v, c.model);
        if (const json* v = r.find("task"))
            read_task(*v, c.task);
        if (const json* v = r.find("stages")) {
            ObjectReader s(*v, "stages");
            for (int i = 1; i <= 3; ++i)
                if (const json* st = s.find(std::to_string(i)))
                    read_stage(*st, "stages." + std::to_string(i), c.stage(i));
        }
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string to_json(const RunConfig& c)
{
    json ranges = json::array();
    for (const auto& r : c.model.beta_ranges)
        ranges.push_back({r.lo, r.hi});
    const auto& m = c.model;
    json model{{"vocab_size", m.vocab_size},
               {"d_model", m.d_model},
               {"n_layers", m.n_layers},
               {"n_heads", m.n_heads},
               {"ffn_hidden", m.ffn_hidden},
               {"n_experts", m.n_experts},
               {"top_k", m.top_k},
               {"router_kind", to_string(m.router_kind)},
               {"moe_placement", to_string(m.moe_placement)},
               {"skip_first_moe_layer", m.skip_first_moe_layer},
               {"shared_expert", m.shared_expert},
               {"dtr_rank", m.dtr_rank},
               {"hypernet_hidden", m.hypernet_hidden},
               {"beta_ranges", ranges},
               {"max_seq_len", m.max_seq_len}};
    json task{{"vocab_a", c.task.vocab_a},
              {"vocab_b", c.task.vocab_b},
              {"rule_a", rule_json(c.task.rule_a)},
              {"rule_b", rule_json(c.task.rule_b)},
              {"prefix_len", c.task.prefix_len},
              {"suffix_len", c.task.suffix_len}};
    json stages{{"1", stage_json(c.stages[0])},
                {"2", stage_json(c.stages[1])},
                {"3", stage_json(c.stages[2])}};
    json j{{"seed", c.seed},
           {"alpha", c.alpha},
           {"eval_batches", c.eval_batches},
           {"eval_batch_size", c.eval_batch_size},
           {"model", model},
           {"task", task},
           {"stages", stages}};
    return j.dump(2) + "\n";
}

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const RunConfig& config)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(config))));
    return buf;
}

std::string to_string(RouterKind kind)
{
    return kind == RouterKind::linear ? "linear" : "dtr";
}

std::string to_string(Placement placement)
{
    switch (placement) {
    case Placement::alternating: return "alternating";
    case Placement::all: return "all";
    case Placement::none: return "none";
    }
    return "none";
}

}  // namespace evomoe
