#include "nabi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nabi::io {

namespace {

constexpr char kMagic[9] = "NABICKPT";
constexpr uint32_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("I/O failure while writing checkpoint");
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("I/O failure while reading checkpoint");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

const char* summary_kind_name(amortisers::SummaryNet::Kind k) {
  switch (k) {
    case amortisers::SummaryNet::Kind::kCnn: return "cnn";
    case amortisers::SummaryNet::Kind::kMlp: return "mlp";
    case amortisers::SummaryNet::Kind::kIdentity: return "identity";
  }
  return "?";
}

ndiff::ParamSet bundle_params(AmortiserBundle& b) {
  using ndiff::ParamSet;
  ParamSet ps;
  auto append = [&ps](ParamSet more) {
    ps.insert(ps.end(), more.begin(), more.end());
  };
  if (b.nbe) {
    append(b.nbe->summary.params("summary"));
    append(b.nbe->head.params("head"));
  } else if (b.fkl) {
    append(b.fkl->summary.params("summary"));
    append(b.fkl->flow.params("flow"));
  } else if (b.rkl) {
    append(b.rkl->infnet.params("infnet"));
  } else if (b.mine) {
    append(b.mine->summary.params("summary"));
    append(b.mine->critic.params("critic"));
  } else if (b.nre) {
    append(b.nre->summary.params("summary"));
    append(b.nre->head.params("head"));
  } else {
    throw std::logic_error("bundle_params: empty bundle");
  }
  return ps;
}

nlohmann::json transform_json(const models::ParamTransform& tf) {
  return {{"kind", models::transform_name(tf.kind)}, {"lo", tf.lo}, {"hi", tf.hi}};
}

models::ParamTransform transform_from_json(const nlohmann::json& j) {
  std::string kind = j.at("kind");
  double lo = j.at("lo"), hi = j.at("hi");
  if (kind == "identity") return models::ParamTransform::identity();
  if (kind == "probit") return models::ParamTransform::probit_scale(lo, hi);
  if (kind == "logit") return models::ParamTransform::logit_scale(lo, hi);
  throw std::runtime_error("checkpoint: unknown transform '" + kind + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bytes(os, kMagic, 8);
  write_pod<uint32_t>(os, kVersion);
  std::string meta = ck.meta.dump();
  write_pod<uint64_t>(os, meta.size());
  write_bytes(os, meta.data(), meta.size());
  write_pod<uint32_t>(os, static_cast<uint32_t>(ck.arrays.size()));
  for (const auto& [name, t] : ck.arrays) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    write_bytes(os, name.data(), name.size());
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    write_bytes(os, t.values.data(), t.values.size() * sizeof(double));
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  uint32_t ver = read_pod<uint32_t>(is);
  if (ver != kVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(ver) +
                             " unsupported (expected " + std::to_string(kVersion) + ")");
  Checkpoint ck;
  uint64_t mlen = read_pod<uint64_t>(is);
  std::string meta(mlen, '\0');
  read_bytes(is, meta.data(), mlen);
  ck.meta = nlohmann::json::parse(meta);
  uint32_t n = read_pod<uint32_t>(is);
  ck.arrays.resize(n);
  for (auto& [name, t] : ck.arrays) {
    uint32_t nl = read_pod<uint32_t>(is);
    name.assign(nl, '\0');
    read_bytes(is, name.data(), nl);
    uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(read_pod<uint64_t>(is));
    t = ndiff::Tensor(shape);
    read_bytes(is, t.values.data(), t.values.size() * sizeof(double));
  }
  return ck;
}

Checkpoint to_checkpoint(AmortiserBundle& b) {
  Checkpoint ck;
  nlohmann::json arch;
  arch["summary_width"] = b.cfg.summary_width;
  arch["head_width"] = b.cfg.head_width;
  if (b.nbe) arch["summary_kind"] = summary_kind_name(b.nbe->summary.kind);
  if (b.fkl) {
    arch["summary_kind"] = summary_kind_name(b.fkl->summary.kind);
    arch["flow_blocks"] = b.cfg.flow_blocks;
    arch["conditioner_width"] = b.cfg.conditioner_width;
    arch["transform"] = transform_json(b.fkl->tf);
  }
  if (b.rkl) {
    arch["summary_kind"] = summary_kind_name(b.rkl->infnet.kind);
    arch["transform"] = transform_json(b.rkl->tf);
    arch["backend"] = amortisers::rkl_backend_name(b.rkl->backend);
  }
  if (b.mine) {
    arch["summary_kind"] = summary_kind_name(b.mine->summary.kind);
    arch["critic_width"] = b.cfg.critic_width;
    arch["objective"] = b.mine->objective;
    arch["mi_estimate"] = b.mine->mi_estimate;
  }
  if (b.nre) {
    arch["summary_kind"] = summary_kind_name(b.nre->summary.kind);
    arch["nre_head_layers"] = b.cfg.nre_head_layers;
    arch["lambda"] = b.nre->lambda;
    arch["theta_lo"] = b.nre->theta_lo;
    arch["theta_hi"] = b.nre->theta_hi;
  }
  ck.meta["format"] = "nabi-checkpoint";
  ck.meta["method"] = b.method;
  ck.meta["model"] = b.model_id;
  ck.meta["data_shape"] = b.data_shape;
  ck.meta["arch"] = arch;
  ck.meta["train"] = {{"seed", b.cfg.seed},
                      {"epochs", b.meta.epochs},
                      {"best_val", b.meta.best_val},
                      {"final_train", b.meta.final_train},
                      {"wallclock_s", b.meta.wallclock_s}};
  for (const auto& p : bundle_params(b)) ck.arrays.emplace_back(p.name, *p.t);
  return ck;
}

AmortiserBundle from_checkpoint(const Checkpoint& ck) {
  AmortiserBundle b;
  b.method = ck.meta.at("method");
  b.model_id = ck.meta.at("model");
  b.data_shape = ck.meta.at("data_shape").get<std::vector<int64_t>>();
  const auto& arch = ck.meta.at("arch");
  b.cfg.summary_width = arch.at("summary_width");
  b.cfg.head_width = arch.at("head_width");
  b.cfg.summary_kind = arch.at("summary_kind");
  const auto& train = ck.meta.at("train");
  b.cfg.seed = train.at("seed");
  b.meta.epochs = train.at("epochs");
  b.meta.best_val = train.at("best_val");
  b.meta.final_train = train.at("final_train");
  b.meta.wallclock_s = train.at("wallclock_s");

  Rng rng(0);
  if (b.method == "nbe") {
    amortisers::NbeEstimator est;
    est.summary = amortisers::make_summary(b.data_shape, b.cfg.summary_kind,
                                           b.cfg.summary_width, b.cfg.head_width, rng);
    est.head = nets::make_mlp({est.summary.out, b.cfg.head_width, 3}, nets::Act::kRelu,
                              nets::Act::kIdentity, rng);
    b.nbe = std::move(est);
  } else if (b.method == "fkl") {
    b.cfg.flow_blocks = arch.at("flow_blocks");
    b.cfg.conditioner_width = arch.at("conditioner_width");
    amortisers::FklPosterior post;
    post.tf = transform_from_json(arch.at("transform"));
    post.summary = amortisers::make_summary(b.data_shape, b.cfg.summary_kind,
                                            b.cfg.summary_width, b.cfg.head_width, rng);
    post.flow = flows::make_coupling_flow(1, post.summary.out, b.cfg.flow_blocks, rng,
                                          {b.cfg.conditioner_width});
    b.fkl = std::move(post);
  } else if (b.method == "rkl1" || b.method == "rkl2" || b.method == "rkl3") {
    amortisers::RklPosterior post;
    post.tf = transform_from_json(arch.at("transform"));
    std::string bk = arch.at("backend");
    post.backend = bk == "exact" ? amortisers::RklBackend::kExact
                   : bk == "synthetic_expert" ? amortisers::RklBackend::kSyntheticExpert
                                              : amortisers::RklBackend::kSyntheticMi;
    post.infnet = amortisers::make_summary(b.data_shape, b.cfg.summary_kind, 2,
                                           b.cfg.head_width, rng);
    b.rkl = std::move(post);
  } else if (b.method == "mine") {
    b.cfg.critic_width = arch.at("critic_width");
    amortisers::MineSummary mine;
    mine.objective = arch.at("objective");
    mine.mi_estimate = arch.at("mi_estimate");
    mine.summary = amortisers::make_summary(b.data_shape, b.cfg.summary_kind, 1,
                                            b.cfg.head_width, rng);
    mine.critic = nets::make_mlp({1 + mine.summary.out, b.cfg.critic_width,
                                  b.cfg.critic_width, b.cfg.critic_width, 1},
                                 nets::Act::kRelu, nets::Act::kIdentity, rng);
    b.mine = std::move(mine);
  } else if (b.method == "nre") {
    b.cfg.nre_head_layers = arch.at("nre_head_layers");
    amortisers::NreClassifier clf;
    clf.lambda = arch.at("lambda");
    clf.theta_lo = arch.at("theta_lo");
    clf.theta_hi = arch.at("theta_hi");
    clf.summary = amortisers::make_summary(b.data_shape, b.cfg.summary_kind,
                                           b.cfg.summary_width, b.cfg.head_width, rng);
    std::vector<int> widths;
    widths.push_back(1 + clf.summary.out);
    for (int l = 0; l < b.cfg.nre_head_layers - 1; ++l)
      widths.push_back(b.cfg.head_width);
    widths.push_back(1);
    clf.head = nets::make_mlp(widths, nets::Act::kRelu, nets::Act::kIdentity, rng);
    b.nre = std::move(clf);
  } else {
    throw std::runtime_error("checkpoint: unknown method '" + b.method + "'");
  }

  // Overwrite the freshly built parameters with the stored arrays.
  ndiff::ParamSet ps = bundle_params(b);
  if (ps.size() != ck.arrays.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& [name, t] = ck.arrays[i];
    if (name != ps[i].name)
      throw std::runtime_error("checkpoint: parameter '" + name + "' unexpected (want '" +
                               ps[i].name + "')");
    if (t.shape != ps[i].t->shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    ps[i].t->values = t.values;
  }
  return b;
}

void save_bundle(const std::string& path, AmortiserBundle& bundle) {
  save_checkpoint(path, to_checkpoint(bundle));
}

AmortiserBundle load_bundle(const std::string& path) {
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace nabi::io
