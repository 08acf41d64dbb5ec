#include "soupkit/soup.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <utility>

#include "soupkit/common.hpp"

namespace soupkit {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_members(const ModelSpec& spec, const std::vector<ModelParams>& members,
                   const char* who) {
  require(!members.empty(), std::string(who) + ": no members");
  for (const ModelParams& m : members) check_params_match(spec, m, who);
}

/// views[l][g][i]: pointer to member i's group (l, g).
std::vector<std::vector<std::vector<const DenseMat*>>> group_views(
    const ModelSpec& spec, const std::vector<ModelParams>& members) {
  std::vector<std::vector<std::vector<const DenseMat*>>> views(spec.num_layers);
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    views[l].resize(groups_per_layer(spec.arch));
    for (std::size_t g = 0; g < views[l].size(); ++g) {
      views[l][g].reserve(members.size());
      for (const ModelParams& m : members) views[l][g].push_back(&m.layers[l][g]);
    }
  }
  return views;
}

/// f64 mean over the chosen member indices, in the order given.
ModelParams mean_of(const ModelSpec& spec, const std::vector<ModelParams>& members,
                    const std::vector<std::int64_t>& chosen) {
  ModelParams out;
  out.layers.resize(spec.num_layers);
  const double inv = 1.0 / double(chosen.size());
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g) {
      auto [r, c] = spec.group_shape(l, g);
      DenseMat acc(r, c);
      for (std::int64_t j = 0; j < r * c; ++j) {
        double s = 0.0;
        for (std::int64_t idx : chosen) s += double(members[idx].layers[l][g].data()[j]);
        acc.data()[j] = float(s * inv);
      }
      out.layers[l].push_back(std::move(acc));
    }
  }
  return out;
}

/// (1 - t) * a + t * b per entry, f64.
ModelParams interpolate(const ModelSpec& spec, const ModelParams& a,
                        const ModelParams& b, double t) {
  ModelParams out;
  out.layers.resize(spec.num_layers);
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g) {
      const DenseMat& ma = a.layers[l][g];
      const DenseMat& mb = b.layers[l][g];
      DenseMat m(ma.rows(), ma.cols());
      for (std::int64_t j = 0; j < m.size(); ++j)
        m.data()[j] = float((1.0 - t) * double(ma.data()[j]) + t * double(mb.data()[j]));
      out.layers[l].push_back(std::move(m));
    }
  }
  return out;
}

/// Member order for the greedy family: by validation accuracy descending,
/// ties by index ascending.
std::vector<std::int64_t> rank_by_acc(const std::vector<double>& accs) {
  std::vector<std::int64_t> order(accs.size());
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (accs[a] != accs[b]) return accs[a] > accs[b];
    return a < b;
  });
  return order;
}

double cosine_lr(double base, std::int64_t epoch, std::int64_t t0) {
  return base * (1.0 + std::cos(kPi * double(epoch % t0) / double(t0))) / 2.0;
}

/// Splits the validation set into an alpha-training mask and a scoring mask.
/// With no holdout both are the full validation mask; otherwise the scoring
/// mask is a disjoint held-out fraction.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> split_val(
    const CsrGraph& g, double holdout, std::uint64_t seed, const char* who) {
  require(holdout >= 0.0 && holdout < 1.0,
          std::string(who) + ": val_holdout must be in [0, 1)");
  if (holdout == 0.0) return {g.val_mask, g.val_mask};
  std::vector<std::int64_t> ids;
  for (std::int64_t v = 0; v < g.num_nodes(); ++v)
    if (g.val_mask[v]) ids.push_back(v);
  require(!ids.empty(), std::string(who) + ": graph has no validation nodes");
  Rng rng(mix_seed(seed, 0x686f6c64));
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[rng.below(i)]);
  std::int64_t hold = std::max<std::int64_t>(1, std::llround(holdout * double(ids.size())));
  require(hold < std::int64_t(ids.size()),
          std::string(who) + ": val_holdout leaves no alpha-training nodes");
  std::vector<std::uint8_t> train(g.num_nodes(), 0), score(g.num_nodes(), 0);
  for (std::int64_t i = 0; i < std::int64_t(ids.size()); ++i)
    (i < hold ? score : train)[ids[i]] = 1;
  return {std::move(train), std::move(score)};
}

/// Peak accounting starts from the caller's live allocations (graph, member
/// params), so the counter reads as memory the souping procedure itself adds.
std::int64_t begin_peak_window() {
  const std::int64_t entry = tracked_bytes();
  reset_peak_bytes();
  return entry;
}

/// Caps peak/wall at the end of the algorithm proper, then attaches the
/// reporting evaluations (never counted).
SoupReport finish(SoupMethod method, const ModelSpec& spec, ModelParams result,
                  Clock::time_point t0, std::int64_t entry_bytes,
                  PassCounters counters, std::vector<TraceEntry> trace,
                  const CsrGraph& g, const PropagationCache& cache) {
  SoupReport rep;
  rep.method = method;
  rep.spec = spec;
  rep.wall_seconds = seconds_since(t0);
  counters.peak_tracked_bytes =
      std::max<std::int64_t>(0, peak_tracked_bytes() - entry_bytes);
  rep.counters = std::move(counters);
  rep.trace = std::move(trace);
  rep.val_acc = evaluate(spec, result, cache, g, g.val_mask).accuracy;
  rep.test_acc = evaluate(spec, result, cache, g, g.test_mask).accuracy;
  rep.result = std::move(result);
  return rep;
}

}  // namespace

DenseMat AlphaMatrix::effective() const {
  if (simplex) return col_softmax(raw);
  DenseMat copy = raw;
  return copy;
}

AlphaMatrix init_alphas(std::int64_t n, std::int64_t layers, std::uint64_t seed,
                        bool simplex) {
  require(n >= 1 && layers >= 1, "init_alphas: need at least one row and column");
  AlphaMatrix a;
  a.raw = DenseMat(n, layers);
  a.simplex = simplex;
  const double std_dev = std::sqrt(2.0 / double(n + layers));
  Rng rng(mix_seed(seed, 0x616c7068));
  for (std::int64_t i = 0; i < a.raw.size(); ++i)
    a.raw.data()[i] = float(std_dev * rng.normal());
  return a;
}

SoupMethod method_from_string(const std::string& s) {
  if (s == "uniform") return SoupMethod::kUniform;
  if (s == "greedy") return SoupMethod::kGreedy;
  if (s == "gis") return SoupMethod::kGis;
  if (s == "ls") return SoupMethod::kLs;
  if (s == "pls") return SoupMethod::kPls;
  fail("unknown soup method: " + s);
}

std::string method_name(SoupMethod m) {
  switch (m) {
    case SoupMethod::kUniform: return "uniform";
    case SoupMethod::kGreedy: return "greedy";
    case SoupMethod::kGis: return "gis";
    case SoupMethod::kLs: return "ls";
    case SoupMethod::kPls: return "pls";
  }
  fail("unknown soup method id");
}

double PassCounters::mean_nodes_per_pass() const {
  if (nodes_touched_per_pass.empty()) return 0.0;
  double s = 0.0;
  for (std::int64_t n : nodes_touched_per_pass) s += double(n);
  return s / double(nodes_touched_per_pass.size());
}

ModelParams build_soup(const ModelSpec& spec,
                       const std::vector<ModelParams>& members,
                       const AlphaMatrix& alphas) {
  check_members(spec, members, "build_soup");
  require(alphas.raw.rows() == std::int64_t(members.size()),
          "build_soup: alpha rows != member count");
  require(alphas.raw.cols() == spec.num_layers,
          "build_soup: alpha cols != layer count");
  const DenseMat eff = alphas.effective();
  auto views = group_views(spec, members);
  ModelParams out;
  out.layers.resize(spec.num_layers);
  for (std::int64_t l = 0; l < spec.num_layers; ++l)
    for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g)
      out.layers[l].push_back(weighted_sum(views[l][g], eff, l));
  return out;
}

ModelParams uniform_mean(const ModelSpec& spec,
                         const std::vector<ModelParams>& members) {
  check_members(spec, members, "uniform_mean");
  std::vector<std::int64_t> all(members.size());
  std::iota(all.begin(), all.end(), std::int64_t{0});
  return mean_of(spec, members, all);
}

SoupReport uniform_soup(const ModelSpec& spec,
                        const std::vector<ModelParams>& members,
                        const CsrGraph& graph) {
  check_members(spec, members, "uniform_soup");
  const std::int64_t entry_bytes = begin_peak_window();
  const auto t0 = Clock::now();
  ModelParams soup = uniform_mean(spec, members);
  PropagationCache cache = prepare(graph, spec.arch);
  return finish(SoupMethod::kUniform, spec, std::move(soup), t0, entry_bytes,
                PassCounters{}, {}, graph, cache);
}

SoupReport greedy_soup(const ModelSpec& spec,
                       const std::vector<ModelParams>& members,
                       const CsrGraph& graph) {
  check_members(spec, members, "greedy_soup");
  const std::int64_t entry_bytes = begin_peak_window();
  const auto t0 = Clock::now();
  PropagationCache cache = prepare(graph, spec.arch);
  const std::int64_t n = graph.num_nodes();
  PassCounters counters;

  std::vector<double> accs(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    accs[i] = evaluate(spec, members[i], cache, graph, graph.val_mask).accuracy;
    ++counters.forward_passes;
    counters.nodes_touched_per_pass.push_back(n);
  }
  const std::vector<std::int64_t> order = rank_by_acc(accs);

  std::vector<std::int64_t> kept;
  ModelParams soup;
  double soup_acc = -std::numeric_limits<double>::infinity();
  std::vector<TraceEntry> trace;
  for (std::int64_t idx : order) {
    std::vector<std::int64_t> trial = kept;
    trial.push_back(idx);
    std::sort(trial.begin(), trial.end());
    ModelParams cand = mean_of(spec, members, trial);
    double acc = evaluate(spec, cand, cache, graph, graph.val_mask).accuracy;
    ++counters.forward_passes;
    counters.nodes_touched_per_pass.push_back(n);
    const bool accepted = acc >= soup_acc;
    if (accepted) {
      kept = std::move(trial);
      soup = std::move(cand);
      soup_acc = acc;
    }
    TraceEntry e;
    e.step = idx;
    e.val_acc = acc;
    e.accepted = accepted;
    trace.push_back(e);
  }
  return finish(SoupMethod::kGreedy, spec, std::move(soup), t0, entry_bytes,
                std::move(counters), std::move(trace), graph, cache);
}

SoupReport gis_soup(const ModelSpec& spec, const std::vector<ModelParams>& members,
                    const CsrGraph& graph, std::int64_t granularity) {
  check_members(spec, members, "gis_soup");
  require(granularity >= 2, "gis_soup: granularity must be >= 2");
  const std::int64_t entry_bytes = begin_peak_window();
  const auto t0 = Clock::now();
  PropagationCache cache = prepare(graph, spec.arch);
  const std::int64_t n = graph.num_nodes();
  PassCounters counters;

  std::vector<double> accs(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    accs[i] = evaluate(spec, members[i], cache, graph, graph.val_mask).accuracy;
    ++counters.forward_passes;
    counters.nodes_touched_per_pass.push_back(n);
  }
  const std::vector<std::int64_t> order = rank_by_acc(accs);

  ModelParams soup = members[order[0]];
  double soup_acc = accs[order[0]];
  std::vector<TraceEntry> trace;
  for (std::size_t j = 1; j < order.size(); ++j) {
    const ModelParams& m = members[order[j]];
    for (std::int64_t t = 0; t < granularity; ++t) {
      const double ratio = double(t) / double(granularity - 1);
      ModelParams cand = interpolate(spec, soup, m, ratio);
      double acc = evaluate(spec, cand, cache, graph, graph.val_mask).accuracy;
      ++counters.forward_passes;
      counters.nodes_touched_per_pass.push_back(n);
      const bool accepted = acc >= soup_acc;
      if (accepted) {
        soup = std::move(cand);
        soup_acc = acc;
      }
      TraceEntry e;
      e.step = order[j];
      e.val_acc = acc;
      e.accepted = accepted;
      e.ratio = ratio;
      trace.push_back(e);
    }
  }
  return finish(SoupMethod::kGis, spec, std::move(soup), t0, entry_bytes,
                std::move(counters), std::move(trace), graph, cache);
}

SoupReport learned_soup(const ModelSpec& spec,
                        const std::vector<ModelParams>& members,
                        const CsrGraph& graph, const LSConfig& cfg) {
  check_members(spec, members, "learned_soup");
  require(cfg.epochs >= 1, "learned_soup: epochs must be positive");
  require(cfg.t0 >= 1, "learned_soup: t0 must be positive");
  const std::int64_t entry_bytes = begin_peak_window();
  const auto t0 = Clock::now();
  PropagationCache cache = prepare(graph, spec.arch);
  const std::int64_t n = graph.num_nodes();
  const std::int64_t nm = std::int64_t(members.size());
  auto views = group_views(spec, members);
  auto [train_val, score_mask] =
      split_val(graph, cfg.val_holdout, cfg.alpha_seed, "learned_soup");

  AlphaMatrix alpha = init_alphas(nm, spec.num_layers, cfg.alpha_seed, cfg.simplex);
  DenseMat best_raw = alpha.raw;
  double best_acc = -std::numeric_limits<double>::infinity();
  PassCounters counters;
  std::vector<TraceEntry> trace;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.t0);
    try {
      GradTape tape;
      Var raw = tape.leaf(&alpha.raw, true);
      Var eff = alpha.simplex ? tape.col_softmax(raw) : raw;
      std::vector<std::vector<Var>> layer_groups(spec.num_layers);
      for (std::int64_t l = 0; l < spec.num_layers; ++l)
        for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g)
          layer_groups[l].push_back(tape.weighted_sum(views[l][g], eff, l));
      Var x = tape.leaf(&graph.features, false);
      Var logits = forward_tape(tape, spec, layer_groups, cache, x, false, 0);
      Var loss = tape.masked_cross_entropy(logits, &graph.labels, &train_val);
      const double loss_v = double(tape.value(loss).at(0, 0));
      require(std::isfinite(loss_v), "non-finite loss");
      EvalResult score = loss_and_accuracy(tape.value(logits), graph.labels, score_mask);
      if (score.accuracy > best_acc) {
        best_acc = score.accuracy;
        best_raw = alpha.raw;
      }
      ++counters.forward_passes;
      counters.nodes_touched_per_pass.push_back(n);
      tape.backward(loss);
      ++counters.backward_passes;
      const DenseMat& gr = tape.grad(raw);
      for (std::int64_t i = 0; i < alpha.raw.size(); ++i) {
        const double p = double(alpha.raw.data()[i]);
        const double gv = double(gr.data()[i]) + cfg.weight_decay * p;
        const float next = float(p - lr * gv);
        require(std::isfinite(next), "non-finite alpha update");
        alpha.raw.data()[i] = next;
      }
      TraceEntry e;
      e.step = epoch;
      e.val_acc = score.accuracy;
      e.loss = loss_v;
      e.lr = lr;
      e.nodes = n;
      trace.push_back(e);
    } catch (const std::exception& ex) {
      fail("learned_soup: diverged at epoch " + std::to_string(epoch) + ": " +
           ex.what());
    }
  }

  alpha.raw = best_raw;
  ModelParams soup = build_soup(spec, members, alpha);
  return finish(SoupMethod::kLs, spec, std::move(soup), t0, entry_bytes,
                std::move(counters), std::move(trace), graph, cache);
}

SoupReport pls_soup(const ModelSpec& spec, const std::vector<ModelParams>& members,
                    const CsrGraph& graph, const Partitioning& parts,
                    const PLSConfig& cfg) {
  check_members(spec, members, "pls_soup");
  require(cfg.epochs >= 1, "pls_soup: epochs must be positive");
  require(cfg.t0 >= 1, "pls_soup: t0 must be positive");
  require(parts.num_parts == cfg.k, "pls_soup: cfg.k != partition count");
  require(cfg.r >= 1 && cfg.r <= cfg.k, "pls_soup: need 1 <= r <= k");
  require(cfg.score_interval >= 1, "pls_soup: score_interval must be positive");
  const std::int64_t entry_bytes = begin_peak_window();
  const auto t0 = Clock::now();
  PropagationCache cache = prepare(graph, spec.arch);
  const std::int64_t nm = std::int64_t(members.size());
  auto views = group_views(spec, members);
  auto [train_val, score_mask] =
      split_val(graph, cfg.val_holdout, cfg.alpha_seed, "pls_soup");
  const std::uint64_t part_seed = mix_seed(cfg.alpha_seed, 0x706c7370);
  const std::uint64_t redraw_seed = mix_seed(part_seed, 0x7264);

  AlphaMatrix alpha = init_alphas(nm, spec.num_layers, cfg.alpha_seed, cfg.simplex);
  DenseMat best_raw = alpha.raw;
  double best_acc = -std::numeric_limits<double>::infinity();
  PassCounters counters;
  std::vector<TraceEntry> trace;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.base_lr, epoch, cfg.t0);

    // Window for this epoch; re-draw once if it has no alpha-training nodes.
    Subgraph sub;
    std::vector<std::uint8_t> sub_mask;
    std::int64_t covered = 0;
    for (int attempt = 0; attempt < 2 && covered == 0; ++attempt) {
      auto sel = choose_partitions(cfg.k, cfg.r,
                                   attempt == 0 ? part_seed : redraw_seed, epoch);
      sub = assemble_subgraph(graph, parts, sel);
      sub_mask.assign(sub.nodes.size(), 0);
      covered = 0;
      for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
        sub_mask[i] = train_val[sub.nodes[i]];
        covered += sub_mask[i];
      }
    }
    require(covered > 0, "pls_soup: no validation nodes in subgraph at epoch " +
                             std::to_string(epoch));
    const std::int64_t m = sub.graph.num_nodes();
    PropagationCache sub_cache = prepare(sub.graph, spec.arch);

    const bool scored =
        (epoch + 1) % cfg.score_interval == 0 || epoch == cfg.epochs - 1;
    try {
      double loss_v, epoch_acc;
      DenseMat pre_step;
      {
        GradTape tape;
        Var raw = tape.leaf(&alpha.raw, true);
        Var eff = alpha.simplex ? tape.col_softmax(raw) : raw;
        std::vector<std::vector<Var>> layer_groups(spec.num_layers);
        for (std::int64_t l = 0; l < spec.num_layers; ++l)
          for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g)
            layer_groups[l].push_back(tape.weighted_sum(views[l][g], eff, l));
        Var x = tape.leaf(&sub.graph.features, false);
        Var logits = forward_tape(tape, spec, layer_groups, sub_cache, x, false, 0);
        Var loss = tape.masked_cross_entropy(logits, &sub.graph.labels, &sub_mask);
        loss_v = double(tape.value(loss).at(0, 0));
        require(std::isfinite(loss_v), "non-finite loss");
        ++counters.forward_passes;
        counters.nodes_touched_per_pass.push_back(m);

        epoch_acc =
            loss_and_accuracy(tape.value(logits), sub.graph.labels, sub_mask).accuracy;
        if (scored) pre_step = alpha.raw;

        tape.backward(loss);
        ++counters.backward_passes;
        const DenseMat& gr = tape.grad(raw);
        for (std::int64_t i = 0; i < alpha.raw.size(); ++i) {
          const double p = double(alpha.raw.data()[i]);
          const double gv = double(gr.data()[i]) + cfg.weight_decay * p;
          const float next = float(p - lr * gv);
          require(std::isfinite(next), "non-finite alpha update");
          alpha.raw.data()[i] = next;
        }
      }  // the tape is gone before the full-graph pass below

      if (scored) {
        // Full-graph snapshot scoring of the pre-step alphas.
        AlphaMatrix snap;
        snap.raw = pre_step;
        snap.simplex = cfg.simplex;
        ModelParams now = build_soup(spec, members, snap);
        double facc = evaluate(spec, now, cache, graph, score_mask).accuracy;
        ++counters.scoring_forwards;
        if (facc > best_acc) {
          best_acc = facc;
          best_raw = std::move(pre_step);
        }
        epoch_acc = facc;
      }

      TraceEntry e;
      e.step = epoch;
      e.val_acc = epoch_acc;
      e.loss = loss_v;
      e.lr = lr;
      e.nodes = m;
      trace.push_back(e);
    } catch (const std::exception& ex) {
      fail("pls_soup: diverged at epoch " + std::to_string(epoch) + ": " + ex.what());
    }
  }

  alpha.raw = best_raw;
  ModelParams soup = build_soup(spec, members, alpha);
  return finish(SoupMethod::kPls, spec, std::move(soup), t0, entry_bytes,
                std::move(counters), std::move(trace), graph, cache);
}

}  // namespace soupkit
