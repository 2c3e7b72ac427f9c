#include "selfcolor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace selfcolor {

static constexpr char kMagic[4] = {'C', 'P', 'R', 'X'};
static constexpr uint32_t kVersion = 1;

namespace {

struct Writer {
  std::vector<uint8_t> buf;

  void u8(uint8_t v) { buf.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void f32_array(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u32(std::bit_cast<uint32_t>(p[i]));
  }
  void f64_array(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u64(std::bit_cast<uint64_t>(p[i]));
  }
};

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return buf[pos++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos++]) << (8 * i);
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(buf.begin() + pos, buf.begin() + pos + n);
    pos += n;
    return s;
  }
};

template <typename T>
constexpr uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 1 : 2;
}

template <typename T>
void write_record(Writer& w, const std::string& name, const std::vector<int64_t>& shape,
                  const T* data, size_t n) {
  w.u32(static_cast<uint32_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(dtype_tag<T>());
  w.u32(static_cast<uint32_t>(shape.size()));
  for (int64_t e : shape) w.u64(static_cast<uint64_t>(e));
  if constexpr (sizeof(T) == 4)
    w.f32_array(reinterpret_cast<const float*>(data), n);
  else
    w.f64_array(reinterpret_cast<const double*>(data), n);
}

struct RawRecord {
  std::vector<int64_t> shape;
  std::vector<double> data;  // held widest; narrowed on placement
  uint8_t dtype = 0;
};

}  // namespace

template <typename T>
static nlohmann::json make_metadata(const Checkpoint<T>& c) {
  nlohmann::json meta;
  meta["spec"] = spec_to_json(c.net.spec);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(spec_hash(c.net.spec)));
  meta["spec_hash"] = hex;
  meta["epoch"] = c.epoch;
  meta["step"] = c.step;
  meta["rng_state"] = c.rng_state;
  meta["loss_scale"] = c.loss_scale;
  meta["drop_epochs"] = c.drop_epochs;
  meta["head_kind"] = c.head_kind;
  nlohmann::json bn_updates = nlohmann::json::object();
  for (const auto& [name, stats] : c.net.bn_stats)
    if (!stats.mean.empty()) bn_updates[name] = stats.updates;
  meta["bn_updates"] = bn_updates;
  if (!c.head.empty())
    meta["head"] = {{"in", c.head.in_dim}, {"hidden", c.head.hidden}, {"out", c.head.out_dim}};
  return meta;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& c, const std::string& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  const std::string meta = make_metadata(c).dump();
  w.u32(static_cast<uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());

  uint32_t n_records = 0;
  Writer body;
  auto emit = [&](const std::string& name, const std::vector<int64_t>& shape,
                  const T* data, size_t n) {
    write_record(body, name, shape, data, n);
    ++n_records;
  };
  for (const auto& name : c.net.parameter_names()) {
    const Tensor<T>& t = c.net.param(name);
    emit(name, t.shape(), t.data(), static_cast<size_t>(t.numel()));
  }
  for (const auto& [bn_name, stats] : c.net.bn_stats) {
    const int64_t n = static_cast<int64_t>(stats.mean.size());
    if (n == 0) continue;
    emit(bn_name + ".running_mean", {n}, stats.mean.data(), stats.mean.size());
    emit(bn_name + ".running_var", {n}, stats.var.data(), stats.var.size());
  }
  if (!c.head.empty())
    for (const auto& name : c.head.parameter_names()) {
      const Tensor<T>& t = c.head.params.at(name);
      emit(name, t.shape(), t.data(), static_cast<size_t>(t.numel()));
    }
  for (const auto& [pname, v] : c.velocity)
    emit("optim." + pname + ".v", {static_cast<int64_t>(v.size())}, v.data(), v.size());

  w.u32(n_records);
  w.buf.insert(w.buf.end(), body.buf.begin(), body.buf.end());

  std::ofstream f(path, std::ios::binary);
  check(static_cast<bool>(f), "save_checkpoint: cannot open " + path);
  f.write(reinterpret_cast<const char*>(w.buf.data()),
          static_cast<std::streamsize>(w.buf.size()));
  check(static_cast<bool>(f), "save_checkpoint: short write to " + path);
}

static std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

static nlohmann::json read_header(Reader& r) {
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t meta_len = r.u32("metadata length");
  return nlohmann::json::parse(r.str(meta_len, "metadata"));
}

uint64_t peek_spec_hash(const std::string& path) {
  auto bytes = slurp(path);
  Reader r{bytes};
  auto meta = read_header(r);
  return spec_hash(spec_from_json(meta.at("spec")));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  auto bytes = slurp(path);
  Reader r{bytes};
  nlohmann::json meta = read_header(r);

  Checkpoint<T> c;
  c.net.spec = spec_from_json(meta.at("spec"));
  c.epoch = meta.at("epoch").get<double>();
  c.step = meta.at("step").get<int64_t>();
  c.rng_state = meta.at("rng_state").get<std::string>();
  c.loss_scale = meta.at("loss_scale").get<double>();
  c.head_kind = meta.value("head_kind", "none");
  if (meta.contains("drop_epochs"))
    c.drop_epochs = meta.at("drop_epochs").get<std::vector<double>>();

  const uint32_t n_records = r.u32("record count");
  std::map<std::string, RawRecord> records;
  for (uint32_t i = 0; i < n_records; ++i) {
    const uint32_t name_len = r.u32("record name length");
    const std::string name = r.str(name_len, "record name");
    RawRecord rec;
    rec.dtype = r.u8(("dtype of " + name).c_str());
    if (rec.dtype != 1 && rec.dtype != 2)
      throw std::runtime_error("checkpoint: bad dtype tag on record " + name);
    const uint32_t rank = r.u32("record rank");
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      rec.shape.push_back(static_cast<int64_t>(r.u64("extent")));
      n *= rec.shape.back();
    }
    rec.data.resize(static_cast<size_t>(n));
    if (rec.dtype == 1)
      for (int64_t j = 0; j < n; ++j)
        rec.data[j] = std::bit_cast<float>(r.u32(("data of " + name).c_str()));
    else
      for (int64_t j = 0; j < n; ++j)
        rec.data[j] = std::bit_cast<double>(r.u64(("data of " + name).c_str()));
    records[name] = std::move(rec);
  }

  auto take = [&](const std::string& name) -> RawRecord& {
    auto it = records.find(name);
    if (it == records.end())
      throw std::runtime_error("checkpoint: missing parameter record " + name);
    if (it->second.dtype != dtype_tag<T>())
      throw std::runtime_error("checkpoint: dtype mismatch on record " + name);
    return it->second;
  };
  auto to_tensor = [&](RawRecord& rec, bool requires_grad) {
    std::vector<T> vals(rec.data.begin(), rec.data.end());
    Tensor<T> t = Tensor<T>::from(rec.shape, std::move(vals));
    t.set_requires_grad(requires_grad);
    return t;
  };

  for (const auto& name : c.net.parameter_names())
    c.net.params[name] = to_tensor(take(name), true);
  for (const auto& l : c.net.spec.layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    auto& stats = c.net.bn_stats[l.name];
    auto it_m = records.find(l.name + ".running_mean");
    if (it_m == records.end()) continue;  // stats never initialized before saving
    RawRecord& m = take(l.name + ".running_mean");
    RawRecord& v = take(l.name + ".running_var");
    stats.mean.assign(m.data.begin(), m.data.end());
    stats.var.assign(v.data.begin(), v.data.end());
    if (meta.contains("bn_updates") && meta["bn_updates"].contains(l.name))
      stats.updates = meta["bn_updates"][l.name].template get<int64_t>();
  }
  if (meta.contains("head")) {
    c.head.in_dim = meta["head"].at("in").get<int>();
    c.head.hidden = meta["head"].at("hidden").get<int>();
    c.head.out_dim = meta["head"].at("out").get<int>();
    for (const auto& name : c.head.parameter_names())
      c.head.params[name] = to_tensor(take(name), true);
  }
  for (auto& [name, rec] : records) {
    if (name.rfind("optim.", 0) != 0) continue;
    const std::string pname = name.substr(6, name.size() - 6 - 2);  // strip "optim." ".v"
    c.velocity[pname] = std::vector<T>(rec.data.begin(), rec.data.end());
  }
  return c;
}

template void save_checkpoint<float>(const Checkpoint<float>&, const std::string&);
template void save_checkpoint<double>(const Checkpoint<double>&, const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace selfcolor
