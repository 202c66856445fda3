#include "plmarl/config.hpp"

#include "plmarl/fs_util.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

namespace plmarl {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& what) { throw ConfigError("config: " + what); }

struct RawEntry {
    std::string value;
    bool consumed = false;
};

// section -> key -> value, with duplicate detection at insert time.
struct RawConfig {
    std::map<std::string, std::map<std::string, RawEntry>> sections;

    void insert(const std::string& section, const std::string& key, const std::string& value) {
        auto [it, fresh] = sections[section].try_emplace(key, RawEntry{value, false});
        (void)it;
        if (!fresh) fail("duplicate key '" + key + "' in section [" + section + "]");
    }

    const std::string* take(const std::string& section, const std::string& key) {
        auto sit = sections.find(section);
        if (sit == sections.end()) return nullptr;
        auto kit = sit->second.find(key);
        if (kit == sit->second.end()) return nullptr;
        kit->second.consumed = true;
        return &kit->second.value;
    }

    // Anything not consumed is an unknown key.
    void reject_leftovers() const {
        for (const auto& [section, keys] : sections)
            for (const auto& [key, entry] : keys)
                if (!entry.consumed) {
                    if (section.empty()) fail("unknown top-level key '" + key + "'");
                    fail("unknown key '" + key + "' in section [" + section + "]");
                }
    }
};

RawConfig tokenize(const std::string& text) {
    static const std::vector<std::string> known_sections = {"env", "model", "train", "strategy"};
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    bool seen_section = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') fail("line " + std::to_string(line_no) + ": malformed section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const auto& s : known_sections) known = known || s == section;
            if (!known) fail("unknown section [" + section + "]");
            seen_section = true;
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            fail("line " + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) fail("line " + std::to_string(line_no) + ": empty key");
        (void)seen_section;
        raw.insert(section, key, value);
    }
    return raw;
}

std::string where(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

template <class T>
void parse_int_into(const std::string& section, const std::string& key, const std::string& text,
                    T& out) {
    T v{};
    const char* b = text.data();
    const char* e = b + text.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        fail(where(section, key) + ": expected an integer, got '" + text + "'");
    out = v;
}

void parse_double_into(const std::string& section, const std::string& key, const std::string& text,
                       double& out) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("");
        out = v;
    } catch (const std::exception&) {
        fail(where(section, key) + ": expected a number, got '" + text + "'");
    }
}

void parse_bool_into(const std::string& section, const std::string& key, const std::string& text,
                     bool& out) {
    if (text == "true") out = true;
    else if (text == "false") out = false;
    else fail(where(section, key) + ": expected true or false, got '" + text + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void RunConfig::finalize() {
    try {
        env.validate();
        model.n_agents = env.n_agents;
        model.obs_dim = env.obs_dim();
        model.n_actions = env.n_actions;
        model.validate();
        train.validate();
        strategy.validate(env.n_agents);
        if (train.steps_per_env % env.max_episode_steps != 0)
            throw std::invalid_argument(
                "train: steps_per_env must be a multiple of env.max_episode_steps");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (output_dir.empty()) fail("output_dir: must not be empty");
}

RunConfig parse_config(const std::string& text) {
    RawConfig raw = tokenize(text);
    RunConfig cfg;

    if (const auto* v = raw.take("", "seed")) parse_int_into("", "seed", *v, cfg.seed);
    if (const auto* v = raw.take("", "total_env_steps"))
        parse_int_into("", "total_env_steps", *v, cfg.train.total_env_steps);
    if (const auto* v = raw.take("", "output_dir")) cfg.output_dir = *v;

    if (const auto* v = raw.take("env", "kind")) {
        if (*v == "key-agent-match") cfg.env.kind = envs::EnvKind::key_agent_match;
        else if (*v == "joint-guess") cfg.env.kind = envs::EnvKind::joint_guess;
        else if (*v == "tabular-generic") cfg.env.kind = envs::EnvKind::tabular_generic;
        else fail("env.kind: unknown kind '" + *v + "'");
    }
    if (const auto* v = raw.take("env", "n_agents")) parse_int_into("env", "n_agents", *v, cfg.env.n_agents);
    if (const auto* v = raw.take("env", "n_actions")) parse_int_into("env", "n_actions", *v, cfg.env.n_actions);
    if (const auto* v = raw.take("env", "max_episode_steps"))
        parse_int_into("env", "max_episode_steps", *v, cfg.env.max_episode_steps);
    if (const auto* v = raw.take("env", "n_states")) parse_int_into("env", "n_states", *v, cfg.env.n_states);
    if (const auto* v = raw.take("env", "game_seed")) parse_int_into("env", "game_seed", *v, cfg.env.game_seed);

    if (const auto* v = raw.take("model", "d_model")) parse_int_into("model", "d_model", *v, cfg.model.d_model);
    if (const auto* v = raw.take("model", "heads")) parse_int_into("model", "heads", *v, cfg.model.heads);
    if (const auto* v = raw.take("model", "blocks")) parse_int_into("model", "blocks", *v, cfg.model.blocks);
    if (const auto* v = raw.take("model", "scoring_layers"))
        parse_int_into("model", "scoring_layers", *v, cfg.model.scoring_layers);
    if (const auto* v = raw.take("model", "scoring_grad_to_encoder"))
        parse_bool_into("model", "scoring_grad_to_encoder", *v, cfg.model.scoring_grad_to_encoder);

    if (const auto* v = raw.take("train", "gamma")) parse_double_into("train", "gamma", *v, cfg.train.gamma);
    if (const auto* v = raw.take("train", "gae_lambda"))
        parse_double_into("train", "gae_lambda", *v, cfg.train.gae_lambda);
    if (const auto* v = raw.take("train", "clip_eps")) parse_double_into("train", "clip_eps", *v, cfg.train.clip_eps);
    if (const auto* v = raw.take("train", "ppo_epochs")) parse_int_into("train", "ppo_epochs", *v, cfg.train.ppo_epochs);
    if (const auto* v = raw.take("train", "minibatches"))
        parse_int_into("train", "minibatches", *v, cfg.train.minibatches);
    if (const auto* v = raw.take("train", "lr")) parse_double_into("train", "lr", *v, cfg.train.lr);
    if (const auto* v = raw.take("train", "entropy_coef"))
        parse_double_into("train", "entropy_coef", *v, cfg.train.entropy_coef);
    if (const auto* v = raw.take("train", "ranking_loss_coef"))
        parse_double_into("train", "ranking_loss_coef", *v, cfg.train.ranking_loss_coef);
    if (const auto* v = raw.take("train", "max_grad_norm"))
        parse_double_into("train", "max_grad_norm", *v, cfg.train.max_grad_norm);
    if (const auto* v = raw.take("train", "normalize_advantages"))
        parse_bool_into("train", "normalize_advantages", *v, cfg.train.normalize_advantages);
    if (const auto* v = raw.take("train", "n_envs")) parse_int_into("train", "n_envs", *v, cfg.train.n_envs);
    if (const auto* v = raw.take("train", "steps_per_env"))
        parse_int_into("train", "steps_per_env", *v, cfg.train.steps_per_env);
    if (const auto* v = raw.take("train", "eval_episodes"))
        parse_int_into("train", "eval_episodes", *v, cfg.train.eval_episodes);
    if (const auto* v = raw.take("train", "checkpoint_every"))
        parse_int_into("train", "checkpoint_every", *v, cfg.train.checkpoint_every);

    if (const auto* v = raw.take("strategy", "kind")) {
        if (*v == "learned-pl") cfg.strategy.kind = StrategyKind::learned_pl;
        else if (*v == "fixed") cfg.strategy.kind = StrategyKind::fixed;
        else if (*v == "random") cfg.strategy.kind = StrategyKind::random;
        else fail("strategy.kind: unknown kind '" + *v + "'");
    }
    if (const auto* v = raw.take("strategy", "fixed_order")) {
        std::vector<int> order;
        std::string tok;
        std::istringstream parts(*v);
        while (std::getline(parts, tok, ',')) {
            int a = 0;
            parse_int_into("strategy", "fixed_order", trim(tok), a);
            order.push_back(a);
        }
        try {
            cfg.strategy.fixed_order = Permutation::of(std::move(order));
        } catch (const std::invalid_argument&) {
            fail("strategy.fixed_order: '" + *v + "' is not a permutation of 0..n-1");
        }
    }

    raw.reject_leftovers();
    cfg.finalize();
    return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "seed = " << cfg.seed << "\n";
    out << "total_env_steps = " << cfg.train.total_env_steps << "\n";
    out << "output_dir = " << cfg.output_dir << "\n";
    out << "\n[env]\n";
    out << "kind = " << envs::to_string(cfg.env.kind) << "\n";
    out << "n_agents = " << cfg.env.n_agents << "\n";
    out << "n_actions = " << cfg.env.n_actions << "\n";
    out << "max_episode_steps = " << cfg.env.max_episode_steps << "\n";
    if (cfg.env.kind == envs::EnvKind::tabular_generic) {
        out << "n_states = " << cfg.env.n_states << "\n";
        out << "game_seed = " << cfg.env.game_seed << "\n";
    }
    out << "\n[model]\n";
    out << "d_model = " << cfg.model.d_model << "\n";
    out << "heads = " << cfg.model.heads << "\n";
    out << "blocks = " << cfg.model.blocks << "\n";
    out << "scoring_layers = " << cfg.model.scoring_layers << "\n";
    out << "scoring_grad_to_encoder = " << (cfg.model.scoring_grad_to_encoder ? "true" : "false")
        << "\n";
    out << "\n[train]\n";
    out << "gamma = " << fmt_double(cfg.train.gamma) << "\n";
    out << "gae_lambda = " << fmt_double(cfg.train.gae_lambda) << "\n";
    out << "clip_eps = " << fmt_double(cfg.train.clip_eps) << "\n";
    out << "ppo_epochs = " << cfg.train.ppo_epochs << "\n";
    out << "minibatches = " << cfg.train.minibatches << "\n";
    out << "lr = " << fmt_double(cfg.train.lr) << "\n";
    out << "entropy_coef = " << fmt_double(cfg.train.entropy_coef) << "\n";
    out << "ranking_loss_coef = " << fmt_double(cfg.train.ranking_loss_coef) << "\n";
    out << "max_grad_norm = " << fmt_double(cfg.train.max_grad_norm) << "\n";
    out << "normalize_advantages = " << (cfg.train.normalize_advantages ? "true" : "false") << "\n";
    out << "n_envs = " << cfg.train.n_envs << "\n";
    out << "steps_per_env = " << cfg.train.steps_per_env << "\n";
    out << "eval_episodes = " << cfg.train.eval_episodes << "\n";
    out << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
    out << "\n[strategy]\n";
    out << "kind = " << to_string(cfg.strategy.kind) << "\n";
    if (cfg.strategy.kind == StrategyKind::fixed) {
        out << "fixed_order = ";
        for (int i = 0; i < cfg.strategy.fixed_order.size(); ++i)
            out << (i ? "," : "") << cfg.strategy.fixed_order.at(i);
        out << "\n";
    }
    return out.str();
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = fsutil::read_file(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(text);
}

bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.seed == b.seed && a.output_dir == b.output_dir && a.env.kind == b.env.kind &&
           a.env.n_agents == b.env.n_agents && a.env.n_actions == b.env.n_actions &&
           a.env.max_episode_steps == b.env.max_episode_steps && a.env.n_states == b.env.n_states &&
           a.env.game_seed == b.env.game_seed && a.model.d_model == b.model.d_model &&
           a.model.heads == b.model.heads && a.model.blocks == b.model.blocks &&
           a.model.scoring_layers == b.model.scoring_layers &&
           a.model.scoring_grad_to_encoder == b.model.scoring_grad_to_encoder &&
           a.train.gamma == b.train.gamma && a.train.gae_lambda == b.train.gae_lambda &&
           a.train.clip_eps == b.train.clip_eps && a.train.ppo_epochs == b.train.ppo_epochs &&
           a.train.minibatches == b.train.minibatches && a.train.lr == b.train.lr &&
           a.train.entropy_coef == b.train.entropy_coef &&
           a.train.ranking_loss_coef == b.train.ranking_loss_coef &&
           a.train.max_grad_norm == b.train.max_grad_norm &&
           a.train.normalize_advantages == b.train.normalize_advantages &&
           a.train.n_envs == b.train.n_envs && a.train.steps_per_env == b.train.steps_per_env &&
           a.train.total_env_steps == b.train.total_env_steps &&
           a.train.eval_episodes == b.train.eval_episodes &&
           a.train.checkpoint_every == b.train.checkpoint_every &&
           a.strategy.kind == b.strategy.kind &&
           (a.strategy.kind != StrategyKind::fixed ||
            a.strategy.fixed_order == b.strategy.fixed_order);
}

}  // namespace plmarl
