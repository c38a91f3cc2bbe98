#include "scoretune/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "scoretune/errors.hpp"
#include "scoretune/parallel.hpp"

namespace scoretune {

int Vocabulary::score_token_count() const {
  return static_cast<int>(std::floor((score_max - score_min) / score_step + 0.5)) + 1;
}

bool Vocabulary::is_score_token(int token) const {
  return token >= reason_tokens && token < total_tokens();
}

double Vocabulary::decode_score(int token) const {
  if (!is_score_token(token))
    throw std::invalid_argument("decode_score: token " + std::to_string(token) +
                                " is not a score token");
  return score_min + static_cast<double>(token - reason_tokens) * score_step;
}

int Vocabulary::encode_score(double score) const {
  if (!std::isfinite(score))
    throw std::invalid_argument("encode_score: non-finite score");
  const int last = score_token_count() - 1;
  int k = static_cast<int>(std::lround(std::clamp(
      (score - score_min) / score_step, 0.0, static_cast<double>(last))));
  k = std::clamp(k, 0, last);
  return reason_tokens + k;
}

void Vocabulary::validate() const {
  if (reason_tokens < 0) throw config_error("vocab.reason_tokens must be >= 0");
  if (!(score_step > 0.0)) throw config_error("vocab.score_step must be positive");
  if (!(score_max > score_min)) throw config_error("vocab.score_max must exceed score_min");
  if (score_token_count() < 2) throw config_error("vocab: score grid needs at least 2 tokens");
}

const char* to_string(PolicyArch arch) {
  return arch == PolicyArch::tabular ? "tabular" : "mlp";
}

PolicyArch policy_arch_from_string(const std::string& name) {
  if (name == "tabular") return PolicyArch::tabular;
  if (name == "mlp") return PolicyArch::mlp;
  throw config_error("unknown policy arch '" + name + "' (expected tabular|mlp)");
}

void PolicyShape::validate() const {
  if (feature_dim < 1) throw config_error("policy.feature_dim must be >= 1");
  if (prefix_len < 0) throw config_error("policy.prefix_len must be >= 0");
  if (arch == PolicyArch::mlp) {
    if (hidden.empty()) throw config_error("policy.hidden must be non-empty for mlp");
    for (int h : hidden)
      if (h < 1) throw config_error("policy.hidden widths must be >= 1");
  }
}

namespace {

// Flat parameter offsets.
//   tabular: [reason_table P*R][score_w S*d][score_b S]
//   mlp:     [W1 h1*d][b1 h1]...[Wk][bk][reason_u R*h][reason_bias P*R][score_u S*h][score_b S]
struct Layout {
  std::vector<std::size_t> layer_w, layer_b;
  std::vector<int> layer_in, layer_out;
  std::size_t reason_table = 0;  // tabular reason logits or mlp per-step bias
  std::size_t reason_u = 0;
  std::size_t score_w = 0;  // tabular affine weights or mlp head weights
  std::size_t score_b = 0;
  std::size_t total = 0;
  int head_in = 0;  // d for tabular, last hidden width for mlp
};

Layout make_layout(const PolicyShape& shape, const Vocabulary& vocab) {
  shape.validate();
  vocab.validate();
  Layout lay;
  const int R = vocab.reason_tokens;
  const int S = vocab.score_token_count();
  std::size_t off = 0;
  if (shape.arch == PolicyArch::tabular) {
    lay.head_in = shape.feature_dim;
    lay.reason_table = off;
    off += static_cast<std::size_t>(shape.prefix_len) * R;
  } else {
    int in = shape.feature_dim;
    for (int h : shape.hidden) {
      lay.layer_w.push_back(off);
      off += static_cast<std::size_t>(h) * in;
      lay.layer_b.push_back(off);
      off += static_cast<std::size_t>(h);
      lay.layer_in.push_back(in);
      lay.layer_out.push_back(h);
      in = h;
    }
    lay.head_in = in;
    lay.reason_u = off;
    off += static_cast<std::size_t>(R) * in;
    lay.reason_table = off;
    off += static_cast<std::size_t>(shape.prefix_len) * R;
  }
  lay.score_w = off;
  off += static_cast<std::size_t>(S) * lay.head_in;
  lay.score_b = off;
  off += static_cast<std::size_t>(S);
  lay.total = off;
  return lay;
}

struct StepDist {
  std::vector<double> logp;
  double entropy = 0.0;
};

StepDist make_dist(std::vector<double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  StepDist dist;
  dist.logp.resize(logits.size());
  double h = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double lp = logits[j] - lse;
    dist.logp[j] = lp;
    h -= std::exp(lp) * lp;
  }
  dist.entropy = h;
  return dist;
}

// Caches the MLP activations for one item; tabular policies carry none.
struct Forward {
  const Policy& policy;
  const ToyItem& item;
  Layout lay;
  std::vector<std::vector<double>> acts;  // a_1..a_k

  Forward(const Policy& p, const ToyItem& it) : policy(p), item(it) {
    lay = make_layout(p.shape, p.vocab);
    if (p.params.size() != lay.total)
      throw std::invalid_argument("policy: parameter count " + std::to_string(p.params.size()) +
                                  " does not match architecture (" + std::to_string(lay.total) +
                                  ")");
    if (static_cast<int>(it.features.size()) != p.shape.feature_dim)
      throw std::invalid_argument("policy: item feature dimension mismatch");
    if (p.shape.arch == PolicyArch::mlp) {
      const double* theta = p.params.data();
      std::span<const double> in(it.features);
      for (std::size_t l = 0; l < lay.layer_w.size(); ++l) {
        std::vector<double> a(lay.layer_out[l]);
        const double* w = theta + lay.layer_w[l];
        const double* b = theta + lay.layer_b[l];
        for (int r = 0; r < lay.layer_out[l]; ++r) {
          double z = b[r];
          for (int c = 0; c < lay.layer_in[l]; ++c) z += w[r * lay.layer_in[l] + c] * in[c];
          a[r] = std::tanh(z);
        }
        acts.push_back(std::move(a));
        in = std::span<const double>(acts.back());
      }
    }
  }

  std::span<const double> head_input() const {
    if (policy.shape.arch == PolicyArch::tabular) return {item.features};
    return {acts.back()};
  }

  std::vector<double> reason_logits(int step) const {
    const int R = policy.vocab.reason_tokens;
    const double* theta = policy.params.data();
    std::vector<double> logits(theta + lay.reason_table + static_cast<std::size_t>(step) * R,
                               theta + lay.reason_table + static_cast<std::size_t>(step + 1) * R);
    if (policy.shape.arch == PolicyArch::mlp) {
      const auto in = head_input();
      const double* u = theta + lay.reason_u;
      for (int j = 0; j < R; ++j) {
        double z = 0.0;
        for (int m = 0; m < lay.head_in; ++m) z += u[j * lay.head_in + m] * in[m];
        logits[j] += z;
      }
    }
    return logits;
  }

  std::vector<double> score_logits() const {
    const int S = policy.vocab.score_token_count();
    const double* theta = policy.params.data();
    const auto in = head_input();
    std::vector<double> logits(theta + lay.score_b, theta + lay.score_b + S);
    const double* w = theta + lay.score_w;
    for (int j = 0; j < S; ++j) {
      double z = 0.0;
      for (int m = 0; m < lay.head_in; ++m) z += w[j * lay.head_in + m] * in[m];
      logits[j] += z;
    }
    return logits;
  }
};

void check_tokens(const Policy& policy, std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("policy: empty token sequence");
  const int reason_steps = static_cast<int>(tokens.size()) - 1;
  if (reason_steps > policy.shape.prefix_len)
    throw std::invalid_argument("policy: sequence has " + std::to_string(reason_steps) +
                                " reason steps, architecture supports " +
                                std::to_string(policy.shape.prefix_len));
  for (int t = 0; t < reason_steps; ++t) {
    if (tokens[t] < 0 || tokens[t] >= policy.vocab.reason_tokens)
      throw std::invalid_argument("policy: token " + std::to_string(tokens[t]) +
                                  " at step " + std::to_string(t) + " is not a reason token");
  }
  if (!policy.vocab.is_score_token(tokens.back()))
    throw std::invalid_argument("policy: final token " + std::to_string(tokens.back()) +
                                " is not a score token");
}

}  // namespace

std::size_t param_count(const PolicyShape& shape, const Vocabulary& vocab) {
  return make_layout(shape, vocab).total;
}

Policy Policy::zeros(PolicyShape shape, Vocabulary vocab) {
  Policy p{std::move(shape), std::move(vocab), {}};
  p.params.assign(param_count(p.shape, p.vocab), 0.0);
  return p;
}

Policy Policy::random_init(PolicyShape shape, Vocabulary vocab, std::uint64_t seed, double scale) {
  Policy p = zeros(std::move(shape), std::move(vocab));
  Rng rng(seed);
  for (double& v : p.params) v = scale * rng.normal();
  return p;
}

Trajectory sample(const Policy& policy, const ToyItem& item, int prefix_len, Rng& rng) {
  if (prefix_len < 0 || prefix_len > policy.shape.prefix_len)
    throw std::invalid_argument("sample: prefix_len out of range");
  Forward fwd(policy, item);
  Trajectory traj;
  traj.item_id = item.id;

  auto draw = [&rng](const StepDist& dist) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t j = 0; j < dist.logp.size(); ++j) {
      cum += std::exp(dist.logp[j]);
      if (u < cum) return static_cast<int>(j);
    }
    return static_cast<int>(dist.logp.size()) - 1;
  };

  for (int t = 0; t < prefix_len; ++t) {
    const StepDist dist = make_dist(fwd.reason_logits(t));
    const int j = draw(dist);
    traj.tokens.push_back(j);
    traj.logp_old.push_back(dist.logp[j]);
    traj.entropy.push_back(dist.entropy);
  }
  const StepDist dist = make_dist(fwd.score_logits());
  const int j = draw(dist);
  traj.tokens.push_back(policy.vocab.reason_tokens + j);
  traj.logp_old.push_back(dist.logp[j]);
  traj.entropy.push_back(dist.entropy);

  traj.logp_new = traj.logp_old;
  traj.parsed_score = policy.vocab.decode_score(traj.tokens.back());
  return traj;
}

std::pair<std::vector<double>, std::vector<double>> logprob_and_entropy(
    const Policy& policy, const ToyItem& item, std::span<const int> tokens) {
  check_tokens(policy, tokens);
  Forward fwd(policy, item);
  std::vector<double> logp, entropy;
  logp.reserve(tokens.size());
  entropy.reserve(tokens.size());
  const int reason_steps = static_cast<int>(tokens.size()) - 1;
  for (int t = 0; t < reason_steps; ++t) {
    const StepDist dist = make_dist(fwd.reason_logits(t));
    logp.push_back(dist.logp[tokens[t]]);
    entropy.push_back(dist.entropy);
  }
  const StepDist dist = make_dist(fwd.score_logits());
  logp.push_back(dist.logp[tokens.back() - policy.vocab.reason_tokens]);
  entropy.push_back(dist.entropy);
  return {std::move(logp), std::move(entropy)};
}

void accumulate_grad_logprob(const Policy& policy, const ToyItem& item,
                             std::span<const int> tokens, std::span<const double> weights,
                             std::span<double> grad) {
  check_tokens(policy, tokens);
  if (weights.size() != tokens.size())
    throw std::invalid_argument("grad_logprob: weights length mismatch");
  Forward fwd(policy, item);
  const Layout& lay = fwd.lay;
  if (grad.size() != lay.total) throw std::invalid_argument("grad_logprob: grad buffer size");

  const int R = policy.vocab.reason_tokens;
  const int reason_steps = static_cast<int>(tokens.size()) - 1;
  const auto head_in = fwd.head_input();
  std::vector<double> d_head(lay.head_in, 0.0);  // mlp: grad wrt last activation

  // dlogp(token)/dlogit_j = onehot_j - p_j, scaled by the step weight
  auto head_step = [&](const std::vector<double>& logits, int picked, double w,
                       std::size_t weight_off, std::size_t bias_off) {
    const StepDist dist = make_dist(logits);
    for (std::size_t j = 0; j < dist.logp.size(); ++j) {
      const double g = w * ((static_cast<int>(j) == picked ? 1.0 : 0.0) - std::exp(dist.logp[j]));
      if (g == 0.0) continue;
      grad[bias_off + j] += g;
      if (weight_off != static_cast<std::size_t>(-1)) {
        for (int m = 0; m < lay.head_in; ++m) {
          grad[weight_off + j * lay.head_in + m] += g * head_in[m];
          if (policy.shape.arch == PolicyArch::mlp)
            d_head[m] += g * policy.params[weight_off + j * lay.head_in + m];
        }
      }
    }
  };

  for (int t = 0; t < reason_steps; ++t) {
    if (weights[t] == 0.0) continue;
    const std::size_t bias_off = lay.reason_table + static_cast<std::size_t>(t) * R;
    if (policy.shape.arch == PolicyArch::tabular) {
      head_step(fwd.reason_logits(t), tokens[t], weights[t], static_cast<std::size_t>(-1),
                bias_off);
    } else {
      head_step(fwd.reason_logits(t), tokens[t], weights[t], lay.reason_u, bias_off);
    }
  }
  if (weights.back() != 0.0) {
    head_step(fwd.score_logits(), tokens.back() - R, weights.back(), lay.score_w, lay.score_b);
  }

  // tabular score weights received g * x directly via head_step (head_in == x);
  // mlp needs the remaining backward pass through the tanh stack
  if (policy.shape.arch == PolicyArch::mlp) {
    std::vector<double> d_act = std::move(d_head);
    for (int l = static_cast<int>(lay.layer_w.size()) - 1; l >= 0; --l) {
      const auto& a = fwd.acts[l];
      std::span<const double> prev =
          l == 0 ? std::span<const double>(item.features) : std::span<const double>(fwd.acts[l - 1]);
      std::vector<double> d_prev(lay.layer_in[l], 0.0);
      for (int r = 0; r < lay.layer_out[l]; ++r) {
        const double dz = d_act[r] * (1.0 - a[r] * a[r]);
        if (dz == 0.0) continue;
        grad[lay.layer_b[l] + r] += dz;
        const std::size_t row = lay.layer_w[l] + static_cast<std::size_t>(r) * lay.layer_in[l];
        for (int c = 0; c < lay.layer_in[l]; ++c) {
          grad[row + c] += dz * prev[c];
          d_prev[c] += policy.params[row + c] * dz;
        }
      }
      d_act = std::move(d_prev);
    }
  }
}

std::vector<double> grad_logprob(const Policy& policy, const ToyItem& item,
                                 std::span<const int> tokens) {
  std::vector<double> grad(policy.params.size(), 0.0);
  const std::vector<double> ones(tokens.size(), 1.0);
  accumulate_grad_logprob(policy, item, tokens, ones, grad);
  return grad;
}

double expected_score(const Policy& policy, const ToyItem& item) {
  Forward fwd(policy, item);
  const StepDist dist = make_dist(fwd.score_logits());
  double mean = 0.0;
  for (std::size_t j = 0; j < dist.logp.size(); ++j) {
    mean += std::exp(dist.logp[j]) *
            policy.vocab.decode_score(policy.vocab.reason_tokens + static_cast<int>(j));
  }
  return mean;
}

SftResult sft_fit(Policy init, std::span<const SftExample> data, int epochs, double lr,
                  int threads) {
  if (data.empty()) throw data_error("sft_fit: empty trajectory set");
  Policy policy = std::move(init);

  std::size_t total_tokens = 0;
  for (const auto& ex : data) total_tokens += ex.tokens.size();

  // mean token logp and its gradient at the current parameters
  auto forward_backward = [&](std::vector<double>* grad_out) {
    std::vector<double> logp_sums(data.size(), 0.0);
    std::vector<std::vector<double>> grads;
    if (grad_out) grads.assign(data.size(), {});
    parallel_for(data.size(), threads, [&](std::size_t i) {
      const auto [logp, entropy] = logprob_and_entropy(policy, data[i].item, data[i].tokens);
      (void)entropy;
      double s = 0.0;
      for (double v : logp) s += v;
      logp_sums[i] = s;
      if (grad_out) {
        grads[i].assign(policy.params.size(), 0.0);
        const std::vector<double> ones(data[i].tokens.size(), 1.0);
        accumulate_grad_logprob(policy, data[i].item, data[i].tokens, ones, grads[i]);
      }
    });
    double total = 0.0;
    for (double s : logp_sums) total += s;
    if (grad_out) {
      grad_out->assign(policy.params.size(), 0.0);
      for (const auto& g : grads)
        for (std::size_t p = 0; p < g.size(); ++p) (*grad_out)[p] += g[p];
      for (double& v : *grad_out) v /= static_cast<double>(total_tokens);
    }
    return total / static_cast<double>(total_tokens);
  };

  SftResult result;
  for (int e = 0; e < epochs; ++e) {
    std::vector<double> grad;
    forward_backward(&grad);
    for (std::size_t p = 0; p < policy.params.size(); ++p) policy.params[p] += lr * grad[p];
    result.epoch_loss.push_back(-forward_backward(nullptr));
  }
  result.policy = std::move(policy);
  return result;
}

std::vector<ToyItem> make_toy_dataset(const ToyDatasetSpec& spec, const Vocabulary& vocab) {
  vocab.validate();
  if (spec.count < 0) throw config_error("toy dataset count must be >= 0");
  if (spec.feature_dim < 1) throw config_error("toy dataset feature_dim must be >= 1");

  Rng proj_rng(derive_seed(spec.seed, {0x70726f6aULL}));  // projection stream
  std::vector<double> w(spec.feature_dim);
  for (double& v : w) v = proj_rng.normal() / std::sqrt(static_cast<double>(spec.feature_dim));
  const double bias = 0.3 * proj_rng.normal();

  std::vector<ToyItem> items(spec.count);
  constexpr TaskKind kTasks[] = {TaskKind::technical, TaskKind::aesthetic, TaskKind::alignment};
  for (int i = 0; i < spec.count; ++i) {
    ToyItem& item = items[i];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "toy-%06d", i);
    item.id = buf;
    item.task = kTasks[i % 3];
    item.features.resize(spec.feature_dim);
    Rng rng(derive_seed(spec.seed, {0x666561ULL, static_cast<std::uint64_t>(i)}));
    for (double& f : item.features) f = rng.normal();
    double u = bias;
    for (int f = 0; f < spec.feature_dim; ++f) u += w[f] * item.features[f];
    const double sig = 1.0 / (1.0 + std::exp(-1.5 * u));
    item.truth_score = vocab.score_min + (vocab.score_max - vocab.score_min) * sig;
  }
  return items;
}

}  // namespace scoretune
