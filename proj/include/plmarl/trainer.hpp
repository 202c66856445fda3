#pragma once

// PPO-style training loop: vectorized rollout collection across an
// environment pool, GAE, and clipped-surrogate optimization of the encoder,
// decoder, and (for learned orderings) scoring segments with one shared Adam.

#include "plmarl/envs.hpp"
#include "plmarl/losses.hpp"

#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace plmarl {

struct TrainConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.05;
    int ppo_epochs = 10;
    int minibatches = 1;
    double lr = 5e-4;
    double entropy_coef = 0.01;
    double ranking_loss_coef = 1e-2;
    double max_grad_norm = 0.5;       // <= 0 disables clipping
    bool normalize_advantages = true;
    int n_envs = 8;
    int steps_per_env = 1;            // env steps collected per env per iteration
    std::int64_t total_env_steps = 50000;
    int eval_episodes = 200;
    int checkpoint_every = 50;        // iterations; consumed by the CLI

    void validate() const {
        if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("train: gamma must be in [0,1)");
        if (gae_lambda < 0.0 || gae_lambda > 1.0)
            throw std::invalid_argument("train: gae_lambda must be in [0,1]");
        if (!(clip_eps > 0.0)) throw std::invalid_argument("train: clip_eps must be positive");
        if (ppo_epochs < 1) throw std::invalid_argument("train: ppo_epochs must be >= 1");
        if (minibatches < 1) throw std::invalid_argument("train: minibatches must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
        if (entropy_coef < 0.0) throw std::invalid_argument("train: entropy_coef must be >= 0");
        if (ranking_loss_coef < 0.0)
            throw std::invalid_argument("train: ranking_loss_coef must be >= 0");
        if (n_envs < 1) throw std::invalid_argument("train: n_envs must be >= 1");
        if (steps_per_env < 1) throw std::invalid_argument("train: steps_per_env must be >= 1");
        if (total_env_steps < 1) throw std::invalid_argument("train: total_env_steps must be >= 1");
        if (eval_episodes < 0) throw std::invalid_argument("train: eval_episodes must be >= 0");
        if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
    }
};

struct IterationMetrics {
    int iteration = 0;
    std::int64_t env_steps = 0;  // cumulative
    double mean_return = 0.0;
    double encoder_loss = 0.0;
    double decoder_loss = 0.0;
    double ranking_loss = 0.0;     // meaningful only when ranking_active
    bool ranking_active = false;   // baselines skip the ranking update entirely
    double order_entropy = 0.0;    // -mean behavior order log-prob
    double approx_kl = 0.0;        // mean(behavior - new) over per-agent log-probs
};

struct EvalStats {
    double mean_return = 0.0;
    double key_first_fraction = -1.0;  // key-agent-match only; -1 otherwise
    int episodes = 0;
};

template <class Scalar>
class Trainer {
public:
    Trainer(Policy<Scalar>& policy, const envs::EnvSpec& env_spec, const TrainConfig& cfg,
            std::uint64_t seed, int workers = 1)
        : policy_(policy), env_spec_(env_spec), cfg_(cfg), seed_(seed),
          workers_(workers), shuffle_rng_(derive_seed(seed, 3000)) {
        cfg_.validate();
        env_spec_.validate();
        if (workers_ < 1) throw std::invalid_argument("trainer: workers must be >= 1");
        if (policy_.config().n_agents != env_spec_.n_agents ||
            policy_.config().obs_dim != env_spec_.obs_dim() ||
            policy_.config().n_actions != env_spec_.n_actions)
            throw std::invalid_argument("trainer: policy and environment shapes disagree");
        if (cfg_.steps_per_env % env_spec_.max_episode_steps != 0)
            throw std::invalid_argument(
                "trainer: steps_per_env must be a multiple of max_episode_steps so "
                "collected segments end on episode boundaries");
        for (int e = 0; e < cfg_.n_envs; ++e) {
            envs_.emplace_back(env_spec_, derive_seed(seed, 1000 + static_cast<std::uint64_t>(e)));
            act_rngs_.emplace_back(derive_seed(seed, 2000 + static_cast<std::uint64_t>(e)));
        }
        current_obs_.resize(static_cast<Eigen::Index>(cfg_.n_envs) * env_spec_.n_agents,
                            env_spec_.obs_dim());
        for (int e = 0; e < cfg_.n_envs; ++e)
            current_obs_.middleRows(static_cast<Eigen::Index>(e) * env_spec_.n_agents,
                                    env_spec_.n_agents) = envs_[static_cast<std::size_t>(e)].reset();
    }

    const TrainConfig& config() const { return cfg_; }
    std::int64_t env_steps() const { return env_steps_; }
    int iteration() const { return iteration_; }
    const RolloutBatch& last_batch() const { return batch_; }

    // One collect + optimize cycle.
    IterationMetrics train_iteration() {
        collect();
        compute_gae(batch_, cfg_.gamma, cfg_.gae_lambda);
        IterationMetrics m = optimize();
        m.iteration = ++iteration_;
        m.env_steps = env_steps_;
        return m;
    }

    // Deterministic-policy evaluation on a fresh, separately seeded env.
    EvalStats evaluate(int episodes) {
        EvalStats stats;
        stats.episodes = episodes;
        if (episodes == 0) return stats;
        envs::Env env(env_spec_, derive_seed(seed_, 5000 + static_cast<std::uint64_t>(eval_calls_)));
        RandomSource rng(derive_seed(seed_, 6000 + static_cast<std::uint64_t>(eval_calls_)));
        ++eval_calls_;
        double total_return = 0.0;
        std::int64_t key_first = 0, steps = 0;
        for (int ep = 0; ep < episodes; ++ep) {
            Matrix<double> obs = env.reset();
            bool done = false;
            while (!done) {
                const int key = env_spec_.kind == envs::EnvKind::key_agent_match
                                    ? env.state_id() / env_spec_.n_actions
                                    : -1;
                auto rec = policy_.act_batch(obs.template cast<Scalar>(), Mode::infer, {&rng});
                envs::StepResult r = env.step(rec[0].actions);
                total_return += r.reward;
                if (key >= 0 && rec[0].order.at(0) == key) ++key_first;
                ++steps;
                obs = r.obs;
                done = r.done;
            }
        }
        stats.mean_return = total_return / episodes;
        if (env_spec_.kind == envs::EnvKind::key_agent_match)
            stats.key_first_fraction = static_cast<double>(key_first) / static_cast<double>(steps);
        return stats;
    }

private:
    // Each worker owns a contiguous range of environments and fills disjoint
    // slices of the batch; records are identical for any worker count because
    // every per-row computation and every rng stream is environment-local.
    void collect() {
        const int E = cfg_.n_envs;
        const int T = E * cfg_.steps_per_env;
        batch_ = RolloutBatch{};
        batch_.n_agents = env_spec_.n_agents;
        batch_.obs_dim = env_spec_.obs_dim();
        batch_.reserve(T);
        batch_.orders.resize(static_cast<std::size_t>(T));
        batch_.dones.resize(static_cast<std::size_t>(T));

        const int W = std::min(workers_, E);
        if (W <= 1) {
            collect_range(0, E);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(W));
            for (int w = 0; w < W; ++w) {
                const int lo = static_cast<int>(static_cast<std::int64_t>(E) * w / W);
                const int hi = static_cast<int>(static_cast<std::int64_t>(E) * (w + 1) / W);
                pool.emplace_back([this, lo, hi, w, &errors] {
                    try {
                        collect_range(lo, hi);
                    } catch (...) {
                        errors[static_cast<std::size_t>(w)] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& err : errors)
                if (err) std::rethrow_exception(err);
        }
        env_steps_ += T;
    }

    // Collects the rollout segment for environments [e_lo, e_hi). Each
    // environment is advanced with its own single-environment forward pass:
    // keeping the forward shape fixed at n rows makes the collected numbers
    // independent of how environments are partitioned across workers, so any
    // worker count reproduces the single-worker rollout byte for byte.
    void collect_range(int e_lo, int e_hi) {
        const int n = env_spec_.n_agents;
        const int T_env = cfg_.steps_per_env;
        for (int e = e_lo; e < e_hi; ++e) {
            RandomSource& rng = act_rngs_[static_cast<std::size_t>(e)];
            for (int step = 0; step < T_env; ++step) {
                const int t = e * T_env + step;  // env-major: each env's segment is contiguous
                const auto obs =
                    current_obs_.middleRows(static_cast<Eigen::Index>(e) * n, n);
                auto records =
                    policy_.act_batch(obs.template cast<Scalar>(), Mode::train, {&rng});
                const auto& rec = records.front();
                batch_.observations.middleRows(static_cast<Eigen::Index>(t) * n, n) = obs;
                batch_.orders[static_cast<std::size_t>(t)] = rec.order;
                batch_.order_log_probs[t] = rec.order_log_prob;
                for (int i = 0; i < n; ++i) {
                    batch_.actions(t, i) = rec.actions[static_cast<std::size_t>(i)];
                    batch_.behavior_log_probs(t, i) = rec.per_agent_log_probs[static_cast<std::size_t>(i)];
                    batch_.values(t, i) = rec.values[static_cast<std::size_t>(i)];
                }
                envs::StepResult r = envs_[static_cast<std::size_t>(e)].step(rec.actions);
                batch_.rewards[t] = r.reward;
                batch_.dones[static_cast<std::size_t>(t)] = r.done ? 1 : 0;
                current_obs_.middleRows(static_cast<Eigen::Index>(e) * n, n) =
                    r.done ? envs_[static_cast<std::size_t>(e)].reset() : r.obs;
            }
        }
    }

    IterationMetrics optimize() {
        const int T = batch_.size();
        const bool use_ranking =
            policy_.strategy().kind == StrategyKind::learned_pl && cfg_.ranking_loss_coef > 0.0;

        IterationMetrics m;
        m.ranking_active = use_ranking;
        double episodes = 0.0;
        for (std::uint8_t d : batch_.dones) episodes += d;
        m.mean_return = episodes > 0.0 ? batch_.rewards.sum() / episodes
                                       : batch_.rewards.sum() / static_cast<double>(T);
        m.order_entropy = -batch_.order_log_probs.mean();

        std::vector<int> idx(static_cast<std::size_t>(T));
        std::iota(idx.begin(), idx.end(), 0);
        int updates = 0;
        for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
            for (int i = T - 1; i > 0; --i)
                std::swap(idx[static_cast<std::size_t>(i)],
                          idx[static_cast<std::size_t>(shuffle_rng_.uniform_int(i + 1))]);
            for (int mb = 0; mb < cfg_.minibatches; ++mb) {
                const int lo = static_cast<int>(static_cast<std::int64_t>(T) * mb / cfg_.minibatches);
                const int hi =
                    static_cast<int>(static_cast<std::int64_t>(T) * (mb + 1) / cfg_.minibatches);
                if (hi <= lo) continue;
                std::vector<int> sel(idx.begin() + lo, idx.begin() + hi);

                ad::Tape<Scalar> tape;
                nn::GraphContext<Scalar> ctx(tape, policy_.params(), true);
                BatchGraph<Scalar> bg =
                    build_batch_graph(ctx, policy_, batch_, sel, cfg_.normalize_advantages);
                auto enc = encoder_loss(ctx, bg);
                auto dec = decoder_loss(ctx, policy_, bg, static_cast<Scalar>(cfg_.clip_eps),
                                        static_cast<Scalar>(cfg_.entropy_coef));
                auto total = tape.add(enc, dec.loss);
                RankingLossVars<Scalar> rank;
                if (use_ranking) {
                    rank = ranking_loss(ctx, policy_, bg, static_cast<Scalar>(cfg_.clip_eps));
                    total = tape.add(total, tape.scale(rank.loss,
                                                       static_cast<Scalar>(cfg_.ranking_loss_coef)));
                }
                tape.backward(total);
                nn::GradientMap<Scalar> grads(policy_.params());
                ctx.export_grads(grads);
                typename nn::ParameterStore<Scalar>::AdamOptions opt;
                opt.lr = cfg_.lr;
                opt.max_grad_norm = cfg_.max_grad_norm;
                policy_.params().adam_step(grads, opt);

                m.encoder_loss += static_cast<double>(tape.value(enc)(0, 0));
                m.decoder_loss += static_cast<double>(tape.value(dec.loss)(0, 0));
                if (use_ranking) m.ranking_loss += static_cast<double>(tape.value(rank.loss)(0, 0));
                // per-agent k1 KL estimate against the collection policy
                double kl = 0.0;
                const auto& new_lp = tape.value(dec.new_log_probs);
                for (int r = 0; r < bg.count; ++r)
                    for (int j = 0; j < bg.n_agents; ++j) {
                        const int agent = bg.orders[static_cast<std::size_t>(r)].at(j);
                        kl += static_cast<double>(bg.behavior_log_probs(r, agent)) -
                              static_cast<double>(new_lp(r * bg.n_agents + j, 0));
                    }
                m.approx_kl += kl / (static_cast<double>(bg.count) * bg.n_agents);
                ++updates;
            }
        }
        if (updates > 0) {
            m.encoder_loss /= updates;
            m.decoder_loss /= updates;
            m.ranking_loss /= updates;
            m.approx_kl /= updates;
        }
        return m;
    }

    Policy<Scalar>& policy_;
    envs::EnvSpec env_spec_;
    TrainConfig cfg_;
    std::uint64_t seed_;
    int workers_ = 1;
    std::vector<envs::Env> envs_;
    std::vector<RandomSource> act_rngs_;
    RandomSource shuffle_rng_;
    Matrix<double> current_obs_;
    RolloutBatch batch_;
    std::int64_t env_steps_ = 0;
    int iteration_ = 0;
    int eval_calls_ = 0;
};

}  // namespace plmarl
