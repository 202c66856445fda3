// plmarl command-line tool.
//
// Subcommands:
//   train     -- train a policy from a config file, writing metrics,
//                checkpoints, and a summary into the run's output directory
//   eval      -- evaluate a checkpointed policy and print return and
//                decision-order statistics
//   oracle    -- compute the exact order-advantage report for a config's
//                environment and write it as JSON
//   selfcheck -- run the built-in numerical verification battery
//
// Exit codes: 0 success, 1 runtime fault or selfcheck failure,
//             2 invalid config or arguments, 3 checkpoint version mismatch.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "plmarl/config.hpp"
#include "plmarl/evaluation.hpp"
#include "plmarl/fs_util.hpp"
#include "plmarl/metrics.hpp"
#include "plmarl/oracle_report.hpp"
#include "plmarl/policy.hpp"
#include "plmarl/selfcheck.hpp"
#include "plmarl/trainer.hpp"

namespace {

using plmarl::RunConfig;

// Seed streams used by the CLI itself; disjoint from the trainer's internal
// streams (1000+e, 2000+e, 3000, 5000+k, 6000+k).
constexpr std::uint64_t kPolicyInitStream = 500;
constexpr std::uint64_t kSummaryEvalStream = 9000;
constexpr std::uint64_t kEvalStream = 9100;

RunConfig load_run_config(const std::string& path,
                          const std::optional<std::uint64_t>& seed_override) {
    RunConfig cfg = plmarl::load_config(path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.finalize();
    }
    if (const char* dir = std::getenv("PLMARL_OUTPUT_DIR")) {
        if (*dir != '\0') cfg.output_dir = dir;
    }
    return cfg;
}

std::string checkpoint_name(std::int64_t iteration) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06lld.ckpt",
                  static_cast<long long>(iteration));
    return buf;
}

nlohmann::ordered_json eval_report_json(const plmarl::PolicyEvalReport& rep,
                                        const plmarl::envs::EnvSpec& spec) {
    nlohmann::ordered_json j;
    j["episodes"] = rep.episodes;
    j["steps"] = rep.steps;
    j["mean_return"] = rep.mean_return;
    if (spec.kind == plmarl::envs::EnvKind::key_agent_match)
        j["key_first_fraction"] = rep.key_first_fraction;
    if (rep.p_oracle_optimal >= 0.0) j["p_oracle_optimal"] = rep.p_oracle_optimal;
    nlohmann::ordered_json orders = nlohmann::ordered_json::object();
    for (const auto& [order, count] : rep.order_counts) orders[order] = count;
    j["order_counts"] = orders;
    return j;
}

int cmd_train(const std::string& config_path,
              const std::optional<std::uint64_t>& seed_override, int workers) {
    RunConfig cfg = load_run_config(config_path, seed_override);
    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    plmarl::fsutil::write_file_atomic(out_dir / "config.resolved",
                                      plmarl::serialize_config(cfg));

    plmarl::Policy<float> policy(cfg.model, cfg.strategy,
                                 plmarl::derive_seed(cfg.seed, kPolicyInitStream));
    plmarl::Trainer<float> trainer(policy, cfg.env, cfg.train, cfg.seed, workers);
    plmarl::MetricsLog log(cfg.output_dir);

    while (trainer.env_steps() < cfg.train.total_env_steps) {
        const plmarl::IterationMetrics m = trainer.train_iteration();
        log.append(m);
        if (cfg.train.checkpoint_every > 0 &&
            m.iteration % cfg.train.checkpoint_every == 0) {
            policy.params().save(out_dir / checkpoint_name(m.iteration));
        }
        if (m.iteration % 50 == 0 || trainer.env_steps() >= cfg.train.total_env_steps) {
            std::cout << "iter " << m.iteration << "  env_steps " << m.env_steps
                      << "  mean_return " << m.mean_return << "\n";
        }
    }
    policy.params().save(out_dir / "checkpoint_final.ckpt");

    const int eval_episodes = std::max(1, cfg.train.eval_episodes);
    const plmarl::PolicyEvalReport rep = plmarl::evaluate_policy(
        policy, cfg.env, cfg.train.gamma, eval_episodes,
        plmarl::derive_seed(cfg.seed, kSummaryEvalStream));

    nlohmann::ordered_json summary;
    summary["config"] = config_path;
    summary["seed"] = cfg.seed;
    summary["strategy"] = plmarl::to_string(cfg.strategy.kind);
    summary["iterations"] = trainer.iteration();
    summary["env_steps"] = trainer.env_steps();
    summary["final_eval"] = eval_report_json(rep, cfg.env);
    plmarl::fsutil::write_file_atomic(out_dir / "summary.json",
                                      summary.dump(2) + "\n");

    std::cout << "training complete: " << trainer.env_steps() << " env steps, "
              << trainer.iteration() << " iterations\n"
              << "final mean return " << rep.mean_return << " over "
              << rep.episodes << " episodes\n"
              << "artifacts in " << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             int episodes, const std::optional<std::uint64_t>& seed_override) {
    RunConfig cfg = load_run_config(config_path, seed_override);
    if (episodes < 1)
        throw plmarl::ConfigError("config: eval episodes must be >= 1, got " +
                                  std::to_string(episodes));

    plmarl::Policy<float> policy(cfg.model, cfg.strategy,
                                 plmarl::derive_seed(cfg.seed, kPolicyInitStream));
    policy.params().load(checkpoint_path);

    const plmarl::PolicyEvalReport rep = plmarl::evaluate_policy(
        policy, cfg.env, cfg.train.gamma, episodes,
        plmarl::derive_seed(cfg.seed, kEvalStream));

    std::cout << "episodes " << rep.episodes << "  steps " << rep.steps << "\n"
              << "mean_return " << rep.mean_return << "\n";
    if (cfg.env.kind == plmarl::envs::EnvKind::key_agent_match)
        std::cout << "key_first_fraction " << rep.key_first_fraction << "\n";
    if (rep.p_oracle_optimal >= 0.0)
        std::cout << "p_oracle_optimal " << rep.p_oracle_optimal << "\n";
    std::cout << "order distribution:\n";
    for (const auto& [order, count] : rep.order_counts) {
        std::cout << "  " << order << "  " << count << "  "
                  << static_cast<double>(count) / static_cast<double>(rep.steps)
                  << "\n";
    }
    return 0;
}

int cmd_oracle(const std::string& config_path,
               const std::optional<std::uint64_t>& seed_override) {
    RunConfig cfg = load_run_config(config_path, seed_override);
    const plmarl::OracleReport rep =
        plmarl::build_oracle_report(cfg.env, cfg.train.gamma);

    const std::filesystem::path out_dir(cfg.output_dir);
    std::filesystem::create_directories(out_dir);
    plmarl::fsutil::write_file_atomic(out_dir / "oracle_report.json", rep.json);

    for (const plmarl::OracleStateReport& s : rep.states) {
        std::cout << "state " << s.state << "  argmax " << s.argmax_order
                  << "  first agent " << s.argmax_first_agent << "  advantage "
                  << s.max_joint_advantage
                  << (s.order_insensitive ? "  (order-insensitive)" : "") << "\n";
    }
    std::cout << "all_states_order_insensitive "
              << (rep.all_states_order_insensitive ? "true" : "false") << "\n"
              << "decomposition_residual_max " << rep.decomposition_residual_max
              << "\n"
              << "bellman_residual " << rep.bellman_residual << "\n"
              << "report written to " << (out_dir / "oracle_report.json").string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Plackett-Luce decision-order learning for cooperative games"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint_path;
    std::optional<std::uint64_t> seed_override;
    int episodes = 1000;
    int workers = 1;
    bool break_gradient_sign = false;

    CLI::App* train = app.add_subcommand("train", "Train a policy from a config");
    train->add_option("--config", config_path, "Path to config file")->required();
    train->add_option("--seed", seed_override, "Override the config's seed");
    train->add_option("--workers", workers, "Rollout worker threads")
        ->check(CLI::PositiveNumber);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpointed policy");
    eval->add_option("--config", config_path, "Path to config file")->required();
    eval->add_option("--checkpoint", checkpoint_path, "Path to checkpoint")
        ->required();
    eval->add_option("--episodes", episodes, "Evaluation episodes");
    eval->add_option("--seed", seed_override, "Override the config's seed");

    CLI::App* oracle =
        app.add_subcommand("oracle", "Write the exact order-advantage report");
    oracle->add_option("--config", config_path, "Path to config file")->required();

    CLI::App* selfcheck =
        app.add_subcommand("selfcheck", "Run the numerical verification battery");
    selfcheck
        ->add_flag("--break-gradient-sign", break_gradient_sign,
                   "Deliberately corrupt the order-gradient sign (test fixture)")
        ->group("");  // hidden from help

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, seed_override, workers);
        if (eval->parsed())
            return cmd_eval(config_path, checkpoint_path, episodes, seed_override);
        if (oracle->parsed()) return cmd_oracle(config_path, seed_override);
        if (selfcheck->parsed()) {
            plmarl::SelfcheckOptions opts;
            opts.break_gradient_sign = break_gradient_sign;
            return plmarl::run_selfcheck(std::cout, opts) == 0 ? 0 : 1;
        }
    } catch (const plmarl::nn::CheckpointVersionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const plmarl::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::length_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
