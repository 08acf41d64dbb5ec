#include "soupkit/gnn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace soupkit {

Arch arch_from_string(const std::string& s) {
  if (s == "gcn") return Arch::kGcn;
  if (s == "sage") return Arch::kSage;
  fail("unknown architecture '" + s + "' (expected gcn or sage)");
}

std::string arch_name(Arch arch) { return arch == Arch::kGcn ? "gcn" : "sage"; }

std::int64_t groups_per_layer(Arch arch) { return arch == Arch::kGcn ? 2 : 3; }

std::pair<std::int64_t, std::int64_t> ModelSpec::group_shape(std::int64_t l,
                                                             std::int64_t g) const {
  const std::int64_t din = layer_in(l);
  const std::int64_t dout = layer_out(l);
  const std::int64_t ng = groups_per_layer(arch);
  require(g >= 0 && g < ng, "group_shape: group index out of range");
  if (g == ng - 1) return {1, dout};  // bias
  return {din, dout};
}

void ModelSpec::validate() const {
  require(num_layers >= 2, "model spec: need at least 2 layers");
  require(in_dim >= 1 && hidden_dim >= 1 && out_dim >= 1,
          "model spec: dimensions must be positive");
  require(dropout >= 0.0f && dropout < 1.0f, "model spec: dropout must be in [0, 1)");
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params;
  params.layers.resize(spec.num_layers);
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    const std::int64_t ng = groups_per_layer(spec.arch);
    for (std::int64_t g = 0; g < ng; ++g) {
      const auto [rows, cols] = spec.group_shape(l, g);
      DenseMat m(rows, cols);
      if (g != ng - 1) {  // weight: Glorot normal; bias stays zero
        const double std_dev = std::sqrt(2.0 / static_cast<double>(rows + cols));
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(l),
                         static_cast<std::uint64_t>(g)));
        for (std::int64_t i = 0; i < m.size(); ++i) {
          m.data()[i] = static_cast<float>(std_dev * rng.normal());
        }
      }
      params.layers[l].push_back(std::move(m));
    }
  }
  return params;
}

void check_params_match(const ModelSpec& spec, const ModelParams& params,
                        const char* who) {
  require(static_cast<std::int64_t>(params.layers.size()) == spec.num_layers,
          std::string(who) + ": layer count mismatch");
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    require(static_cast<std::int64_t>(params.layers[l].size()) ==
                groups_per_layer(spec.arch),
            std::string(who) + ": group count mismatch at layer " + std::to_string(l));
    for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g) {
      const auto [rows, cols] = spec.group_shape(l, g);
      const DenseMat& m = params.layers[l][g];
      require(m.rows() == rows && m.cols() == cols,
              std::string(who) + ": shape mismatch at layer " + std::to_string(l) +
                  " group " + std::to_string(g));
    }
  }
}

PropagationCache prepare(const CsrGraph& g, Arch arch) {
  PropagationCache cache;
  cache.arch = arch;
  cache.norm = arch == Arch::kGcn ? gcn_norm(g.adj) : mean_norm(g.adj);
  return cache;
}

DenseMat forward_eval(const ModelSpec& spec, const ModelParams& params,
                      const PropagationCache& cache, const DenseMat& features) {
  check_params_match(spec, params, "forward_eval");
  require(features.cols() == spec.in_dim, "forward_eval: feature dim mismatch");
  require(cache.norm.rows() == features.rows(),
          "forward_eval: cache built for a different graph");
  require(cache.arch == spec.arch, "forward_eval: cache built for a different arch");

  DenseMat h;
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    const DenseMat& in = l == 0 ? features : h;
    DenseMat z;
    if (spec.arch == Arch::kGcn) {
      const DenseMat& w = params.layers[l][0];
      DenseMat agg = spmm(cache.norm, in);
      z = matmul(agg, w);
      bias_add_inplace(z, params.layers[l][1]);
    } else {
      const DenseMat& w_self = params.layers[l][0];
      const DenseMat& w_neigh = params.layers[l][1];
      z = matmul(in, w_self);
      {
        DenseMat agg = spmm(cache.norm, in);
        DenseMat nb = matmul(agg, w_neigh);
        add_inplace(z, nb);
      }
      bias_add_inplace(z, params.layers[l][2]);
    }
    if (l < spec.num_layers - 1) relu_inplace(z);
    h = std::move(z);
  }
  h.check_finite("forward_eval");
  return h;
}

Var forward_tape(GradTape& tape, const ModelSpec& spec,
                 const std::vector<std::vector<Var>>& layer_groups,
                 const PropagationCache& cache, Var features, bool training,
                 std::uint64_t dropout_seed) {
  require(static_cast<std::int64_t>(layer_groups.size()) == spec.num_layers,
          "forward_tape: layer var count mismatch");
  require(cache.arch == spec.arch, "forward_tape: cache built for a different arch");

  Var h = features;
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    if (training && spec.dropout > 0.0f) {
      h = tape.dropout(h, spec.dropout,
                       mix_seed(dropout_seed, static_cast<std::uint64_t>(l)));
    }
    Var z;
    if (spec.arch == Arch::kGcn) {
      Var agg = tape.spmm(&cache.norm, h);
      z = tape.bias_add(tape.matmul(agg, layer_groups[l][0]), layer_groups[l][1]);
    } else {
      Var self = tape.matmul(h, layer_groups[l][0]);
      Var nb = tape.matmul(tape.spmm(&cache.norm, h), layer_groups[l][1]);
      z = tape.bias_add(tape.add(self, nb), layer_groups[l][2]);
    }
    h = l < spec.num_layers - 1 ? tape.relu(z) : z;
  }
  return h;
}

EvalResult loss_and_accuracy(const DenseMat& logits,
                             const std::vector<std::uint32_t>& labels,
                             const std::vector<std::uint8_t>& mask) {
  EvalResult res;
  res.loss = masked_cross_entropy(logits, labels, mask);
  std::int64_t hit = 0, count = 0;
  for (std::int64_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (best == static_cast<std::int64_t>(labels[r])) ++hit;
    ++count;
  }
  res.accuracy = static_cast<double>(hit) / static_cast<double>(count);
  return res;
}

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params,
                    const PropagationCache& cache, const CsrGraph& g,
                    const std::vector<std::uint8_t>& mask) {
  DenseMat logits = forward_eval(spec, params, cache, g.features);
  return loss_and_accuracy(logits, g.labels, mask);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "GSKP", version, arch, layer count, dims, dropout, then
// every parameter group as (rows u32, cols u32, f32 data), little-endian.
// ---------------------------------------------------------------------------

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t bytes,
                 const char* section) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
  require(out.good(), std::string("save_params: write failed in section ") + section);
}

void read_bytes(std::ifstream& in, void* p, std::size_t bytes, const char* section) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes),
          std::string("load_params: truncated file in section ") + section);
}

}  // namespace

void save_params(const ModelSpec& spec, const ModelParams& params,
                 const std::string& path) {
  check_params_match(spec, params, "save_params");
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), "save_params: cannot open " + path);

  write_bytes(out, "GSKP", 4, "magic");
  const std::uint32_t version = 1;
  write_bytes(out, &version, 4, "version");
  const std::uint8_t arch = static_cast<std::uint8_t>(spec.arch);
  const std::uint8_t layers = static_cast<std::uint8_t>(spec.num_layers);
  write_bytes(out, &arch, 1, "arch");
  write_bytes(out, &layers, 1, "num_layers");
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(spec.in_dim),
                                 static_cast<std::uint32_t>(spec.hidden_dim),
                                 static_cast<std::uint32_t>(spec.out_dim)};
  write_bytes(out, dims, 12, "dims");
  write_bytes(out, &spec.dropout, 4, "dropout");

  for (const auto& layer : params.layers) {
    for (const DenseMat& m : layer) {
      const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
      const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
      write_bytes(out, &rows, 4, "group_shape");
      write_bytes(out, &cols, 4, "group_shape");
      write_bytes(out, m.data(), static_cast<std::size_t>(m.size()) * 4,
                  "group_data");
    }
  }
}

std::pair<ModelSpec, ModelParams> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), "load_params: cannot open " + path);

  char magic[4];
  read_bytes(in, magic, 4, "magic");
  require(std::memcmp(magic, "GSKP", 4) == 0, "load_params: bad magic");
  std::uint32_t version = 0;
  read_bytes(in, &version, 4, "version");
  require(version == 1,
          "load_params: unsupported version " + std::to_string(version));

  std::uint8_t arch = 0, layers = 0;
  read_bytes(in, &arch, 1, "arch");
  read_bytes(in, &layers, 1, "num_layers");
  require(arch <= 1, "load_params: unknown arch byte");
  std::uint32_t dims[3];
  read_bytes(in, dims, 12, "dims");

  ModelSpec spec;
  spec.arch = static_cast<Arch>(arch);
  spec.num_layers = layers;
  spec.in_dim = dims[0];
  spec.hidden_dim = dims[1];
  spec.out_dim = dims[2];
  read_bytes(in, &spec.dropout, 4, "dropout");
  spec.validate();

  ModelParams params;
  params.layers.resize(spec.num_layers);
  for (std::int64_t l = 0; l < spec.num_layers; ++l) {
    for (std::int64_t g = 0; g < groups_per_layer(spec.arch); ++g) {
      std::uint32_t rows = 0, cols = 0;
      read_bytes(in, &rows, 4, "group_shape");
      read_bytes(in, &cols, 4, "group_shape");
      const auto [want_rows, want_cols] = spec.group_shape(l, g);
      require(rows == want_rows && cols == want_cols,
              "load_params: group shape inconsistent with spec at layer " +
                  std::to_string(l));
      std::vector<float> data(static_cast<std::size_t>(rows) * cols);
      read_bytes(in, data.data(), data.size() * 4, "group_data");
      params.layers[l].emplace_back(rows, cols, std::move(data));
    }
  }

  char extra;
  in.read(&extra, 1);
  require(in.eof(), "load_params: trailing bytes after parameter groups");
  return {spec, params};
}

}  // namespace soupkit
