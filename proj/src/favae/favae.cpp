#include "famarl/favae/favae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "famarl/errors.hpp"
#include "famarl/nn/optim.hpp"
#include "famarl/rng.hpp"

namespace famarl::favae {

namespace {

using nn::BlockSpec;
using nn::NetworkSpec;

constexpr const char* kNetNames[] = {"enc1", "enc2", "enc3", "head1", "head2", "head3",
                                     "dec3", "dec2", "dec1", "inject1", "out"};

std::size_t conv_out(std::size_t len) { return (len - 3) / 2 + 1; }

std::string to_string(ReconReduction r) { return r == ReconReduction::Sum ? "sum" : "mean"; }
ReconReduction recon_from_string(const std::string& s) {
  if (s == "sum") return ReconReduction::Sum;
  if (s == "mean") return ReconReduction::Mean;
  throw ConfigError("unknown reconstruction reduction '" + s + "' (expected sum or mean)");
}

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void add_into(Vector& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

LadderCode split_head(const Vector& out, std::size_t d) {
  LadderCode c;
  c.mu.assign(out.begin(), out.begin() + d);
  c.logvar.assign(out.begin() + d, out.begin() + 2 * d);
  return c;
}

}  // namespace

ActionSeq PaddedSegment::actions() const {
  ActionSeq out;
  for (int t = 0; t < length; ++t) out.push_back({action(t, 0), action(t, 1)});
  return out;
}

PaddedSegment pad_segment(const ActionSeq& seg, int L, std::array<double, kActionDim> scale) {
  if (seg.empty()) throw UsageError("cannot pad an empty segment");
  if (static_cast<int>(seg.size()) > L)
    throw UsageError("segment of length " + std::to_string(seg.size()) + " exceeds L=" +
                     std::to_string(L) + "; split it first");
  PaddedSegment p;
  p.L = L;
  p.length = static_cast<int>(seg.size());
  p.x.assign(kChannels * L, 0.0);
  for (int t = 0; t < L; ++t) {
    const bool real = t < p.length;
    if (real) {
      p.x[t] = seg[t].ax / scale[0];
      p.x[L + t] = seg[t].ay / scale[1];
    }
    p.x[kActionDim * L + t] = real ? 1.0 : 0.0;
    p.x[(kActionDim + 1) * L + t] = real ? 0.0 : 1.0;
  }
  return p;
}

int trimmed_length(std::span<const double> on, std::span<const double> off) {
  for (std::size_t t = 0; t < on.size(); ++t)
    if (off[t] > on[t]) return std::max<int>(1, static_cast<int>(t));
  return static_cast<int>(on.size());
}

ActionSeq trim(const PaddedSegment& p, std::array<double, kActionDim> scale) {
  const std::span<const double> x(p.x);
  const int n = trimmed_length(x.subspan(kActionDim * p.L, p.L), x.subspan((kActionDim + 1) * p.L, p.L));
  ActionSeq out;
  for (int t = 0; t < n; ++t) out.push_back({p.action(t, 0) * scale[0], p.action(t, 1) * scale[1]});
  return out;
}

int choose_length(std::vector<int> lengths, double quantile) {
  if (lengths.empty()) throw UsageError("cannot choose L from an empty corpus");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("quantile must be in (0, 1]");
  std::sort(lengths.begin(), lengths.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * lengths.size()));
  int v = std::max(3, lengths[std::max<std::size_t>(rank, 1) - 1]);
  while (v % 4 != 3) ++v;
  return v;
}

std::vector<ActionSeq> split_to_fit(const std::vector<ActionSeq>& segments, int L) {
  std::vector<ActionSeq> out;
  std::vector<ActionSeq> stack;
  for (const auto& s : segments) {
    stack.assign(1, s);
    while (!stack.empty()) {
      auto cur = std::move(stack.back());
      stack.pop_back();
      if (static_cast<int>(cur.size()) <= L) {
        out.push_back(std::move(cur));
        continue;
      }
      const auto half = cur.size() / 2;
      stack.emplace_back(cur.begin() + half, cur.end());
      stack.emplace_back(cur.begin(), cur.begin() + half);
    }
  }
  return out;
}

void LadderConfig::validate() const {
  if (latent_dims.size() != kNumLadders || c_last.size() != kNumLadders)
    throw ConfigError("FAVAE uses exactly 3 ladders");
  for (int d : latent_dims)
    if (d < 1) throw ConfigError("latent dims must be positive");
  for (double c : c_last)
    if (!(c >= 0.0)) throw ConfigError("C_last must be non-negative");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(learning_rate > 0.0) || !(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
    throw ConfigError("learning_rate must be positive and final_lr_fraction in (0, 1]");
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (anneal_epochs == 0 || anneal_epochs > epochs) throw ConfigError("anneal_epochs must be in [1, epochs]");
  if (conv1_channels < 1 || conv2_channels < 1 || hidden < 1) throw ConfigError("layer widths must be positive");
}

int LadderConfig::anneal() const {
  return anneal_epochs > 0 ? anneal_epochs : std::max(1, static_cast<int>(0.8 * epochs));
}

double LadderConfig::scheduled_c(int ladder, int epoch) const {
  return std::min(static_cast<double>(epoch) / anneal(), 1.0) * c_last.at(ladder);
}

std::vector<double> LadderConfig::scheduled_c(int epoch) const {
  std::vector<double> c;
  for (std::size_t l = 0; l < c_last.size(); ++l) c.push_back(scheduled_c(static_cast<int>(l), epoch));
  return c;
}

int LadderConfig::total_latent() const { return std::accumulate(latent_dims.begin(), latent_dims.end(), 0); }

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    kl += 0.5 * (mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i]);
  return kl;
}

LossTerms favae_loss(const std::vector<Vector>& x, const std::vector<Vector>& recon,
                     const std::vector<LatentCode>& codes, const LadderConfig& cfg,
                     const std::vector<double>& capacity, LossGrad* grad) {
  const std::size_t B = x.size();
  if (B == 0 || recon.size() != B || codes.size() != B) throw UsageError("favae_loss: batch sizes disagree");
  const std::size_t ladders = codes[0].size();
  if (capacity.size() != ladders) throw UsageError("favae_loss: one capacity per ladder required");
  LossTerms t;
  t.kl.assign(ladders, 0.0);
  const double inv_b = 1.0 / static_cast<double>(B);
  if (grad) {
    grad->recon.assign(B, {});
    grad->mu.assign(B, std::vector<Vector>(ladders));
    grad->logvar.assign(B, std::vector<Vector>(ladders));
  }
  for (std::size_t i = 0; i < B; ++i) {
    if (x[i].size() != recon[i].size()) throw UsageError("favae_loss: reconstruction shape mismatch");
    const double norm = cfg.recon == ReconReduction::Sum ? 1.0 : 1.0 / static_cast<double>(x[i].size());
    double r = 0.0;
    if (grad) grad->recon[i].resize(x[i].size());
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double e = recon[i][k] - x[i][k];
      r += e * e;
      if (grad) grad->recon[i][k] = 2.0 * e * norm * inv_b;
    }
    t.recon += r * norm * inv_b;
    for (std::size_t l = 0; l < ladders; ++l) t.kl[l] += gaussian_kl(codes[i][l].mu, codes[i][l].logvar) * inv_b;
  }
  t.total = t.recon;
  for (std::size_t l = 0; l < ladders; ++l) t.total += cfg.beta * std::abs(t.kl[l] - capacity[l]);
  if (grad) {
    for (std::size_t l = 0; l < ladders; ++l) {
      const double diff = t.kl[l] - capacity[l];
      const double s = cfg.beta * static_cast<double>((diff > 0) - (diff < 0)) * inv_b;
      for (std::size_t i = 0; i < B; ++i) {
        const auto& c = codes[i][l];
        auto& dm = grad->mu[i][l];
        auto& dv = grad->logvar[i][l];
        dm.resize(c.mu.size());
        dv.resize(c.mu.size());
        for (std::size_t k = 0; k < c.mu.size(); ++k) {
          dm[k] = s * c.mu[k];
          dv[k] = s * 0.5 * (std::exp(c.logvar[k]) - 1.0);
        }
      }
    }
  }
  return t;
}

FavaeModel::FavaeModel(int L, LadderConfig cfg, std::uint64_t seed) : L_(L), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (L < 3 || L % 4 != 3) throw ConfigError("FAVAE length L must be of the form 4k+3, got " + std::to_string(L));
  const std::size_t Lu = static_cast<std::size_t>(L);
  const std::size_t L1 = conv_out(Lu), L2 = conv_out(L1);
  if (L2 < 1) throw ConfigError("L too small for two stride-2 convolutions");
  const auto c1 = static_cast<std::size_t>(cfg_.conv1_channels);
  const auto c2 = static_cast<std::size_t>(cfg_.conv2_channels);
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  const auto d0 = static_cast<std::size_t>(cfg_.latent_dims[0]);
  const auto d1 = static_cast<std::size_t>(cfg_.latent_dims[1]);
  const auto d2 = static_cast<std::size_t>(cfg_.latent_dims[2]);

  std::map<std::string, std::vector<BlockSpec>> layers;
  layers["enc1"] = {BlockSpec::conv1d(kChannels, c1, Lu, 3, 2), BlockSpec::relu(c1 * L1)};
  layers["enc2"] = {BlockSpec::conv1d(c1, c2, L1, 3, 2), BlockSpec::relu(c2 * L2)};
  layers["enc3"] = {BlockSpec::dense(c2 * L2, h), BlockSpec::relu(h)};
  layers["head1"] = {BlockSpec::dense(c1 * L1, 2 * d0)};
  layers["head2"] = {BlockSpec::dense(c2 * L2, 2 * d1)};
  layers["head3"] = {BlockSpec::dense(h, 2 * d2)};
  layers["dec3"] = {BlockSpec::dense(d2, h), BlockSpec::relu(h)};
  layers["dec2"] = {BlockSpec::dense(h + d1, c2 * L2), BlockSpec::relu(c2 * L2)};
  layers["dec1"] = {BlockSpec::conv_transpose1d(c2, c1, L2, 3, 2), BlockSpec::relu(c1 * L1)};
  layers["inject1"] = {BlockSpec::dense(d0, c1 * L1)};
  layers["out"] = {BlockSpec::conv_transpose1d(c1, kChannels, L1, 3, 2)};

  std::uint64_t k = 0;
  for (const char* name : kNetNames) {
    NetworkSpec spec{layers.at(name), derive_seed(seed, ++k)};
    nets_.emplace(name, nn::Network(spec));
  }
}

LatentCode FavaeModel::encode(const Vector& x) const {
  const auto a1 = net("enc1").forward(x);
  const auto a2 = net("enc2").forward(a1);
  const auto a3 = net("enc3").forward(a2);
  LatentCode code{split_head(net("head1").forward(a1), cfg_.latent_dims[0]),
                  split_head(net("head2").forward(a2), cfg_.latent_dims[1]),
                  split_head(net("head3").forward(a3), cfg_.latent_dims[2])};
  for (auto& c : code) c.z = c.mu;
  return code;
}

Vector FavaeModel::decode(const std::vector<Vector>& z) const {
  if (z.size() != kNumLadders) throw UsageError("decode expects one latent per ladder");
  const auto g3 = net("dec3").forward(z[2]);
  const auto g2 = net("dec2").forward(concat(g3, z[1]));
  auto g1 = net("dec1").forward(g2);
  add_into(g1, net("inject1").forward(z[0]));
  return net("out").forward(g1);
}

std::vector<Vector> FavaeModel::split_latent(std::span<const double> z) const {
  if (z.size() != latent_size())
    throw UsageError("latent of size " + std::to_string(z.size()) + ", model expects " +
                     std::to_string(latent_size()));
  std::vector<Vector> out;
  std::size_t off = 0;
  for (int d : cfg_.latent_dims) {
    out.emplace_back(z.begin() + off, z.begin() + off + d);
    off += d;
  }
  return out;
}

Vector FavaeModel::decode_flat(std::span<const double> z) const { return decode(split_latent(z)); }

ActionSeq FavaeModel::decode_and_trim(std::span<const double> z) const {
  PaddedSegment p;
  p.L = L_;
  p.x = decode_flat(z);
  auto seq = trim(p, scale_);
  for (auto& a : seq) a = a.clamped();
  return seq;
}

ActionSeq FavaeModel::decode_and_trim(const LatentCode& code) const {
  Vector flat;
  for (const auto& c : code) flat.insert(flat.end(), c.z.begin(), c.z.end());
  return decode_and_trim(flat);
}

ActionSeq FavaeModel::reconstruct(const PaddedSegment& p) const { return decode_and_trim(encode(p.x)); }

Vector FavaeModel::forward(const Vector& x, const std::vector<Vector>& noise, Cache& c) const {
  const auto a1 = net("enc1").forward(x, c.enc1);
  const auto a2 = net("enc2").forward(a1, c.enc2);
  const auto a3 = net("enc3").forward(a2, c.enc3);
  c.code = {split_head(net("head1").forward(a1, c.head1), cfg_.latent_dims[0]),
            split_head(net("head2").forward(a2, c.head2), cfg_.latent_dims[1]),
            split_head(net("head3").forward(a3, c.head3), cfg_.latent_dims[2])};
  c.noise = noise;
  for (int l = 0; l < kNumLadders; ++l) c.code[l].z = nn::reparameterize(c.code[l].mu, c.code[l].logvar, noise[l]);
  const auto g3 = net("dec3").forward(c.code[2].z, c.dec3);
  const auto g2 = net("dec2").forward(concat(g3, c.code[1].z), c.dec2);
  auto g1 = net("dec1").forward(g2, c.dec1);
  add_into(g1, net("inject1").forward(c.code[0].z, c.inject1));
  return net("out").forward(g1, c.out);
}

void FavaeModel::backward(const Cache& c, const Vector& d_out, const std::vector<Vector>& d_mu,
                          const std::vector<Vector>& d_logvar, std::map<std::string, nn::ParamSet>& grads) const {
  auto bw = [&](const char* name, const nn::Trace& tr, std::span<const double> g) {
    return net(name).backward(tr, g, grads.at(name));
  };
  const auto dg1 = bw("out", c.out, d_out);
  std::vector<Vector> dz(kNumLadders);
  dz[0] = bw("inject1", c.inject1, dg1);
  const auto dg2 = bw("dec1", c.dec1, dg1);
  const auto dcat = bw("dec2", c.dec2, dg2);
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  dz[1].assign(dcat.begin() + h, dcat.end());
  dz[2] = bw("dec3", c.dec3, std::span<const double>(dcat).first(h));

  std::vector<Vector> dhead(kNumLadders);
  for (int l = 0; l < kNumLadders; ++l) {
    const auto& code = c.code[l];
    const std::size_t d = code.mu.size();
    dhead[l].assign(2 * d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::exp(0.5 * code.logvar[k]);
      dhead[l][k] = dz[l][k] + d_mu[l][k];
      dhead[l][d + k] = dz[l][k] * 0.5 * sd * c.noise[l][k] + d_logvar[l][k];
    }
  }
  const auto da3 = bw("head3", c.head3, dhead[2]);
  auto da2 = bw("head2", c.head2, dhead[1]);
  add_into(da2, bw("enc3", c.enc3, da3));
  auto da1 = bw("head1", c.head1, dhead[0]);
  add_into(da1, bw("enc2", c.enc2, da2));
  bw("enc1", c.enc1, da1);
}

nn::Checkpoint FavaeModel::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.metadata = {{"kind", "favae"},
                 {"L", L_},
                 {"action_scale", {scale_[0], scale_[1]}},
                 {"latent_dims", cfg_.latent_dims},
                 {"beta", cfg_.beta},
                 {"c_last", cfg_.c_last},
                 {"epochs", cfg_.epochs},
                 {"anneal_epochs", cfg_.anneal()},
                 {"batch_size", cfg_.batch_size},
                 {"learning_rate", cfg_.learning_rate},
                 {"final_lr_fraction", cfg_.final_lr_fraction},
                 {"recon", to_string(cfg_.recon)},
                 {"conv1_channels", cfg_.conv1_channels},
                 {"conv2_channels", cfg_.conv2_channels},
                 {"hidden", cfg_.hidden}};
  ck.networks = nets_;
  return ck;
}

FavaeModel FavaeModel::from_checkpoint(const nn::Checkpoint& ck) {
  const auto& m = ck.metadata;
  if (m.value("kind", "") != "favae") throw UsageError("checkpoint is not a FAVAE model");
  FavaeModel model;
  model.L_ = m.at("L").get<int>();
  model.scale_ = {m.at("action_scale")[0].get<double>(), m.at("action_scale")[1].get<double>()};
  auto& c = model.cfg_;
  c.latent_dims = m.at("latent_dims").get<std::vector<int>>();
  c.beta = m.at("beta").get<double>();
  c.c_last = m.at("c_last").get<std::vector<double>>();
  c.epochs = m.at("epochs").get<int>();
  c.anneal_epochs = m.at("anneal_epochs").get<int>();
  c.batch_size = m.at("batch_size").get<int>();
  c.learning_rate = m.at("learning_rate").get<double>();
  c.final_lr_fraction = m.at("final_lr_fraction").get<double>();
  c.recon = recon_from_string(m.at("recon").get<std::string>());
  c.conv1_channels = m.at("conv1_channels").get<int>();
  c.conv2_channels = m.at("conv2_channels").get<int>();
  c.hidden = m.at("hidden").get<int>();
  c.validate();
  for (const char* name : kNetNames)
    if (!ck.networks.count(name)) throw UsageError(std::string("FAVAE checkpoint lacks network ") + name);
  model.nets_ = ck.networks;
  return model;
}

std::array<double, kActionDim> action_rms(const std::vector<ActionSeq>& segments) {
  std::array<double, kActionDim> sum{0.0, 0.0};
  std::size_t n = 0;
  for (const auto& s : segments)
    for (const auto& a : s) {
      sum[0] += a.ax * a.ax;
      sum[1] += a.ay * a.ay;
      ++n;
    }
  std::array<double, kActionDim> out{1.0, 1.0};
  for (std::size_t d = 0; d < kActionDim; ++d)
    if (n > 0 && sum[d] > 0.0) out[d] = std::sqrt(sum[d] / n);
  return out;
}

LossTerms evaluate_corpus(const FavaeModel& model, const std::vector<ActionSeq>& segments,
                          const std::vector<double>& capacity) {
  std::vector<Vector> xs, ys;
  std::vector<LatentCode> codes;
  for (const auto& s : segments) {
    xs.push_back(pad_segment(s, model.L(), model.action_scale()).x);
    codes.push_back(model.encode(xs.back()));
    std::vector<Vector> z;
    for (const auto& c : codes.back()) z.push_back(c.mu);
    ys.push_back(model.decode(z));
  }
  return favae_loss(xs, ys, codes, model.config(), capacity);
}

FavaeModel train_favae(const std::vector<ActionSeq>& segments, int L, const LadderConfig& cfg,
                       const TrainOptions& opts) {
  if (segments.empty()) throw UsageError("FAVAE training needs at least one segment");
  FavaeModel model(L, cfg, derive_seed(opts.seed, 1));
  model.set_action_scale(action_rms(segments));
  std::vector<Vector> data;
  for (const auto& s : segments) data.push_back(pad_segment(s, L, model.action_scale()).x);

  std::map<std::string, nn::OptimizerState> opt;
  std::map<std::string, nn::ParamSet> grads;
  for (auto& [name, net] : model.networks()) {
    opt.emplace(name, nn::OptimizerState::for_params(net.params(), {.learning_rate = cfg.learning_rate}));
    grads.emplace(name, net.params().zeros_like());
  }

  Rng rng(derive_seed(opts.seed, 2));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  FavaeModel last_good = model;
  auto diverged = [&](int epoch) {
    if (opts.last_good_path) last_good.save(*opts.last_good_path);
    throw NumericalError("FAVAE training diverged at epoch " + std::to_string(epoch) +
                         (opts.last_good_path ? "; last good model written to " + opts.last_good_path->string()
                                              : std::string()));
  };

  const auto B = static_cast<std::size_t>(cfg.batch_size);
  std::vector<FavaeModel::Cache> caches(B);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto capacity = cfg.scheduled_c(epoch);
    const int anneal = cfg.anneal();
    const double lr_scale =
        epoch < anneal ? 1.0
                       : std::pow(cfg.final_lr_fraction,
                                  static_cast<double>(epoch - anneal + 1) / std::max(1, cfg.epochs - anneal));
    for (auto& [name, st] : opt) st.config.learning_rate = cfg.learning_rate * lr_scale;
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b0 = 0; b0 < order.size(); b0 += B) {
      const std::size_t b1 = std::min(order.size(), b0 + B);
      std::vector<Vector> xs, ys;
      std::vector<LatentCode> codes;
      for (std::size_t k = b0; k < b1; ++k) {
        std::vector<Vector> noise;
        for (int d : cfg.latent_dims) {
          Vector n(d);
          for (auto& v : n) v = rng.normal();
          noise.push_back(std::move(n));
        }
        xs.push_back(data[order[k]]);
        ys.push_back(model.forward(xs.back(), noise, caches[k - b0]));
        codes.push_back(caches[k - b0].code);
      }
      LossGrad g;
      const auto terms = favae_loss(xs, ys, codes, cfg, capacity, &g);
      if (!std::isfinite(terms.total)) diverged(epoch);
      for (auto& [name, p] : grads) p.set_zero();
      try {
        for (std::size_t i = 0; i < xs.size(); ++i) model.backward(caches[i], g.recon[i], g.mu[i], g.logvar[i], grads);
      } catch (const NumericalError&) {
        diverged(epoch);
      }
      for (auto& [name, net] : model.networks()) nn::adam_step(net.params(), grads.at(name), opt.at(name));
    }
    const auto eval = evaluate_corpus(model, segments, capacity);
    if (!std::isfinite(eval.total)) diverged(epoch);
    model.log.push_back({epoch, eval.total, eval.recon, eval.kl, capacity});
    last_good = model;
  }
  return model;
}

std::vector<double> calibrate_capacity(const std::vector<ActionSeq>& segments, int L, const LadderConfig& cfg,
                                       std::uint64_t seed) {
  LadderConfig c = cfg;
  c.beta = 0.1;
  c.c_last.assign(kNumLadders, 0.0);
  TrainOptions opts;
  opts.seed = derive_seed(seed, 0xca1b);
  const auto model = train_favae(segments, L, c, opts);
  auto kl = evaluate_corpus(model, segments, c.c_last).kl;
  for (double& v : kl) v = std::max(0.0, v);
  return kl;
}

TraversalResult latent_traversal(const FavaeModel& model, const ActionSeq& base, int ladder, int index,
                                 const std::vector<double>& values) {
  const auto& dims = model.config().latent_dims;
  if (ladder < 0 || ladder >= kNumLadders) throw UsageError("ladder must be in [0, 3), got " + std::to_string(ladder));
  if (index < 0 || index >= dims[ladder])
    throw UsageError("index " + std::to_string(index) + " out of range for ladder " + std::to_string(ladder) +
                     " with " + std::to_string(dims[ladder]) + " dims");
  auto code = model.encode(pad_segment(base, model.L(), model.action_scale()).x);
  TraversalResult r{ladder, index, values, {}};
  for (double v : values) {
    auto c = code;
    c[ladder].z[index] = v;
    r.sequences.push_back(model.decode_and_trim(c));
  }
  return r;
}

bool TraversalEffect::strictly_monotone() const {
  bool up = true, down = true;
  for (std::size_t k = 1; k < mean_final_y.size(); ++k) {
    up = up && mean_final_y[k] > mean_final_y[k - 1];
    down = down && mean_final_y[k] < mean_final_y[k - 1];
  }
  return mean_final_y.size() > 1 && (up || down);
}

TraversalEffect traversal_effect(const FavaeModel& model, const std::vector<ActionSeq>& bases, int ladder, int index,
                                 const std::vector<double>& values, double max_speed) {
  if (bases.empty()) throw UsageError("traversal needs at least one base segment");
  TraversalEffect e;
  e.mean_final_y.assign(values.size(), 0.0);
  const double n = static_cast<double>(bases.size());
  double shift = 0.0, ref = 0.0;
  for (const auto& b : bases) {
    const auto code = model.encode(pad_segment(b, model.L(), model.action_scale()).x);
    const double mu = code.at(static_cast<std::size_t>(ladder)).mu.at(static_cast<std::size_t>(index));
    const double lv = code[ladder].logvar[index];
    e.kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv) / n;
    const auto end0 = env::integrate_free(model.decode_and_trim(code), max_speed).back();
    ref += std::hypot(end0.x, end0.y) / n;
    const auto tr = latent_traversal(model, b, ladder, index, values);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const auto end = env::integrate_free(tr.sequences[k], max_speed).back();
      e.mean_final_y[k] += end.y / n;
      shift += env::distance(end, end0) / (n * static_cast<double>(values.size()));
    }
  }
  e.relative_endpoint_shift = ref > 0 ? shift / ref : 0.0;
  return e;
}

LossTrend post_anneal_trend(const std::vector<EpochLog>& log, int anneal_epochs, int window) {
  if (window < 1) throw UsageError("window must be >= 1");
  LossTrend t;
  std::vector<double> ma;
  for (std::size_t e = static_cast<std::size_t>(std::max(anneal_epochs, 0)); e + window <= log.size(); ++e) {
    double s = 0.0;
    for (int k = 0; k < window; ++k) s += log[e + k].total;
    ma.push_back(s / window);
  }
  t.points = static_cast<int>(ma.size());
  for (std::size_t k = 1; k < ma.size(); ++k)
    t.max_relative_rise = std::max(t.max_relative_rise, (ma[k] - ma[k - 1]) / std::abs(ma[k - 1]));
  if (!ma.empty()) t.end_not_above_start = ma.back() <= ma.front();
  return t;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv) {
  std::ofstream f(csv, std::ios::binary);
  if (!f) throw UsageError("cannot write " + csv.string());
  f << "epoch,total,recon";
  for (int l = 0; l < kNumLadders; ++l) f << ",kl" << l;
  for (int l = 0; l < kNumLadders; ++l) f << ",c" << l;
  f << '\n';
  for (const auto& e : log) {
    f << e.epoch << ',' << nlohmann::json(e.total).dump() << ',' << nlohmann::json(e.recon).dump();
    for (double v : e.kl) f << ',' << nlohmann::json(v).dump();
    for (double v : e.capacity) f << ',' << nlohmann::json(v).dump();
    f << '\n';
  }
}

std::vector<EpochLog> read_training_log(const std::filesystem::path& csv) {
  std::ifstream f(csv);
  if (!f) throw UsageError("cannot read " + csv.string());
  std::string line;
  std::getline(f, line);
  std::vector<EpochLog> log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 3 + 2 * kNumLadders) throw UsageError("malformed training log row in " + csv.string());
    EpochLog e;
    e.epoch = static_cast<int>(v[0]);
    e.total = v[1];
    e.recon = v[2];
    e.kl.assign(v.begin() + 3, v.begin() + 3 + kNumLadders);
    e.capacity.assign(v.begin() + 3 + kNumLadders, v.end());
    log.push_back(std::move(e));
  }
  return log;
}

void write_traversal_jsonl(std::ostream& os, const TraversalResult& r, double max_speed) {
  for (std::size_t k = 0; k < r.values.size(); ++k) {
    const auto& seq = r.sequences[k];
    const auto pos = env::integrate_free(seq, max_speed);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      nlohmann::ordered_json j;
      j["ladder"] = r.ladder;
      j["index"] = r.index;
      j["value"] = r.values[k];
      j["t"] = t;
      j["x"] = pos[t + 1].x;
      j["y"] = pos[t + 1].y;
      j["ax"] = seq[t].ax;
      j["ay"] = seq[t].ay;
      os << j.dump() << '\n';
    }
  }
}

}  // namespace famarl::favae
