#include "vitlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <set>
#include <sstream>

namespace vitlab {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'R', 'L'};
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxNdims = 8;

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  put_u64(out, std::bit_cast<uint64_t>(v));
}

struct Reader {
  std::span<const unsigned char> bytes;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (bytes.size() - pos < n) throw ParseError(std::string("archive: truncated header at ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
};

uint64_t checked_product(const std::vector<int64_t>& dims) {
  unsigned __int128 p = 1;
  for (int64_t d : dims) {
    if (d <= 0) throw ParseError("archive: non-positive dim");
    p *= static_cast<uint64_t>(d);
    if (p > (static_cast<unsigned __int128>(1) << 62)) {
      throw ParseError("archive: dim product overflow");
    }
  }
  return static_cast<uint64_t>(p);
}

}  // namespace

ArchiveEntry ArchiveEntry::tensor(std::string name, const Tensor& t) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = 0;
  e.dims = t.dims();
  e.f64.assign(t.data().begin(), t.data().end());
  return e;
}

ArchiveEntry ArchiveEntry::text(std::string name, const std::string& body) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = 1;
  e.dims = {static_cast<int64_t>(body.size())};
  e.bytes.assign(body.begin(), body.end());
  return e;
}

Tensor ArchiveEntry::to_tensor() const {
  if (dtype != 0) throw ContractError("archive entry " + name + " is not a tensor");
  return Tensor(dims, f64);
}

std::string ArchiveEntry::to_text() const {
  if (dtype != 1) throw ContractError("archive entry " + name + " is not text");
  return std::string(bytes.begin(), bytes.end());
}

std::vector<unsigned char> encode_archive(const std::vector<ArchiveEntry>& entries) {
  std::set<std::string> names;
  for (const ArchiveEntry& e : entries) {
    if (!names.insert(e.name).second) {
      throw ContractError("archive: duplicate entry name: " + e.name);
    }
    const uint64_t count = checked_product(e.dims.empty() ? std::vector<int64_t>{1} : e.dims);
    if (e.dtype == 0 && e.f64.size() != count) {
      throw ContractError("archive: entry " + e.name + " payload does not match dims");
    }
    if (e.dtype == 1 && e.bytes.size() != count) {
      throw ContractError("archive: entry " + e.name + " payload does not match dims");
    }
    if (e.dtype > 1) throw ContractError("archive: entry " + e.name + " has unknown dtype");
  }

  // Header size first, so payload offsets are known up front.
  size_t header = 4 + 4 + 4;
  for (const ArchiveEntry& e : entries) {
    header += 4 + e.name.size() + 1 + 4 + 8 * e.dims.size() + 8 + 8;
  }

  std::vector<unsigned char> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kArchiveVersion);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  uint64_t offset = header;
  for (const ArchiveEntry& e : entries) {
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(e.dtype);
    put_u32(out, static_cast<uint32_t>(e.dims.size()));
    for (int64_t d : e.dims) put_u64(out, static_cast<uint64_t>(d));
    const uint64_t len = e.dtype == 0 ? 8 * e.f64.size() : e.bytes.size();
    put_u64(out, offset);
    put_u64(out, len);
    offset += len;
  }
  for (const ArchiveEntry& e : entries) {
    if (e.dtype == 0) {
      for (double v : e.f64) put_f64(out, v);
    } else {
      out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    }
  }
  return out;
}

std::vector<ArchiveEntry> decode_archive(std::span<const unsigned char> bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw ParseError("archive: bad magic");
  r.pos = 4;
  const uint32_t version = r.u32("version");
  if (version != kArchiveVersion) {
    throw ParseError("archive: unsupported version " + std::to_string(version));
  }
  const uint32_t count = r.u32("entry count");

  std::vector<ArchiveEntry> entries;
  std::set<std::string> names;
  struct Span {
    uint64_t offset, len;
  };
  std::vector<Span> payloads;
  for (uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    const uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > kMaxNameLen) throw ParseError("archive: bad name length");
    r.need(name_len, "name");
    e.name.assign(reinterpret_cast<const char*>(&bytes[r.pos]), name_len);
    r.pos += name_len;
    if (!names.insert(e.name).second) throw ParseError("archive: duplicate entry name: " + e.name);
    e.dtype = r.u8("dtype");
    if (e.dtype > 1) throw ParseError("archive: unknown dtype for entry " + e.name);
    const uint32_t ndims = r.u32("ndims");
    if (ndims == 0 || ndims > kMaxNdims) throw ParseError("archive: bad ndims for entry " + e.name);
    for (uint32_t k = 0; k < ndims; ++k) {
      const uint64_t d = r.u64("dim");
      if (d == 0 || d > (uint64_t{1} << 48)) throw ParseError("archive: bad dim for entry " + e.name);
      e.dims.push_back(static_cast<int64_t>(d));
    }
    const uint64_t numel = checked_product(e.dims);
    const uint64_t offset = r.u64("payload offset");
    const uint64_t len = r.u64("payload length");
    const uint64_t expected = e.dtype == 0 ? numel * 8 : numel;
    if (len != expected) throw ParseError("archive: payload length mismatch for entry " + e.name);
    if (offset > bytes.size() || bytes.size() - offset < len) {
      throw ParseError("archive: truncated payload for entry " + e.name);
    }
    payloads.push_back({offset, len});
    entries.push_back(std::move(e));
  }

  for (size_t i = 0; i < entries.size(); ++i) {
    ArchiveEntry& e = entries[i];
    const unsigned char* p = &bytes[payloads[i].offset];
    if (e.dtype == 0) {
      const size_t n = payloads[i].len / 8;
      e.f64.resize(n);
      for (size_t k = 0; k < n; ++k) {
        uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(p[k * 8 + b]) << (8 * b);
        e.f64[k] = std::bit_cast<double>(v);
      }
    } else {
      e.bytes.assign(p, p + payloads[i].len);
    }
  }
  return entries;
}

void save_archive(const std::vector<ArchiveEntry>& entries, const std::string& path) {
  write_file_atomic(path, std::span<const unsigned char>(encode_archive(entries)));
}

std::vector<ArchiveEntry> load_archive(const std::string& path) {
  return decode_archive(read_file(path));
}

const ArchiveEntry& find_entry(const std::vector<ArchiveEntry>& entries, const std::string& name) {
  for (const ArchiveEntry& e : entries) {
    if (e.name == name) return e;
  }
  throw ParseError("archive: missing entry: " + name);
}

void save_model(const ViTModel& model, const std::string& path) {
  std::vector<ArchiveEntry> entries;
  entries.push_back(ArchiveEntry::text("__config__", serialize_vit_config(model.config)));
  for (const auto& [name, tensor] : model.named_parameters()) {
    entries.push_back(ArchiveEntry::tensor(name, tensor));
  }
  save_archive(entries, path);
}

ViTModel load_model(const std::string& path) {
  const std::vector<ArchiveEntry> entries = load_archive(path);
  const ViTConfig config = parse_vit_config(find_entry(entries, "__config__").to_text());
  config.validate();

  // Shapes come from a fresh skeleton; every stored entry must match exactly.
  ViTModel model = init_vit(config, 0);
  std::set<std::string> expected;
  for (auto& [name, tensor] : model.named_parameters()) {
    expected.insert(name);
    const ArchiveEntry& e = find_entry(entries, name);
    if (e.dtype != 0 || e.dims != tensor.dims()) {
      throw ParseError("model load: entry " + name + " has shape " + format_dims(e.dims) +
                       ", expected " + format_dims(tensor.dims()));
    }
    std::copy(e.f64.begin(), e.f64.end(), tensor.data().begin());
  }
  for (const ArchiveEntry& e : entries) {
    if (e.name != "__config__" && !expected.contains(e.name)) {
      throw ParseError("model load: unexpected entry " + e.name);
    }
  }
  return model;
}

void save_probe_dataset(const ProbeDataset& data, const std::string& path) {
  std::vector<ArchiveEntry> entries;
  std::ostringstream meta;
  meta << "task = " << to_string(data.task) << "\n";
  meta << "grid = " << data.grid << "\n";
  meta << "num_classes = " << data.num_classes << "\n";
  meta << "patch_size = " << data.patch_size << "\n";
  entries.push_back(ArchiveEntry::text("__meta__", meta.str()));
  entries.push_back(ArchiveEntry::tensor("features", data.features));
  entries.push_back(ArchiveEntry::tensor("targets", data.targets));
  Tensor cat({static_cast<int64_t>(data.size()), 1});
  Tensor norms({static_cast<int64_t>(data.size()), 1});
  Tensor ids({static_cast<int64_t>(data.size()), 1});
  for (size_t i = 0; i < data.size(); ++i) {
    cat.at(static_cast<int64_t>(i)) = static_cast<double>(static_cast<int>(data.category[i]));
    norms.at(static_cast<int64_t>(i)) = data.norms[i];
    ids.at(static_cast<int64_t>(i)) = static_cast<double>(data.image_ids[i]);
  }
  entries.push_back(ArchiveEntry::tensor("category", cat));
  entries.push_back(ArchiveEntry::tensor("norms", norms));
  entries.push_back(ArchiveEntry::tensor("image_ids", ids));
  save_archive(entries, path);
}

ProbeDataset load_probe_dataset(const std::string& path) {
  const std::vector<ArchiveEntry> entries = load_archive(path);
  ProbeDataset data;
  std::istringstream meta(find_entry(entries, "__meta__").to_text());
  std::string line;
  while (std::getline(meta, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t");
      const size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "task") data.task = probe_task_from_string(value);
    else if (key == "grid") data.grid = std::stoll(value);
    else if (key == "num_classes") data.num_classes = std::stoll(value);
    else if (key == "patch_size") data.patch_size = std::stoll(value);
    else throw ParseError("probe dataset: unknown meta key " + key);
  }
  data.features = find_entry(entries, "features").to_tensor();
  data.targets = find_entry(entries, "targets").to_tensor();
  const Tensor cat = find_entry(entries, "category").to_tensor();
  const Tensor norms = find_entry(entries, "norms").to_tensor();
  const Tensor ids = find_entry(entries, "image_ids").to_tensor();
  const int64_t n = data.features.dim(0);
  if (cat.dim(0) != n || norms.dim(0) != n || ids.dim(0) != n || data.targets.dim(0) != n) {
    throw ParseError("probe dataset: row counts disagree");
  }
  for (int64_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(cat.at(i));
    if (c < 0 || c > 2) throw ParseError("probe dataset: bad category code");
    data.category.push_back(static_cast<TokenCategory>(c));
    data.norms.push_back(norms.at(i));
    data.image_ids.push_back(static_cast<int64_t>(ids.at(i)));
  }
  return data;
}

void save_probe_head(const ProbeHead& head, const std::string& path) {
  std::vector<ArchiveEntry> entries;
  entries.push_back(ArchiveEntry::tensor("weight", head.weight));
  entries.push_back(ArchiveEntry::tensor("bias", head.bias));
  save_archive(entries, path);
}

ProbeHead load_probe_head(const std::string& path) {
  const std::vector<ArchiveEntry> entries = load_archive(path);
  ProbeHead head;
  head.weight = find_entry(entries, "weight").to_tensor();
  head.bias = find_entry(entries, "bias").to_tensor();
  if (head.weight.rank() != 2 || head.bias.rank() != 1 ||
      head.weight.dim(1) != head.bias.dim(0)) {
    throw ParseError("probe head: inconsistent weight/bias shapes");
  }
  return head;
}

// -------- run configuration --------

namespace {

struct KvReader {
  std::map<std::string, std::pair<std::string, int64_t>> values;  // key -> (value, line)
  std::set<std::string> consumed;

  bool has(const std::string& key) const { return values.count(key) > 0; }

  template <typename F>
  void take(const std::string& key, F&& apply) {
    auto it = values.find(key);
    if (it == values.end()) return;
    consumed.insert(key);
    try {
      apply(it->second.first);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("config: bad value for " + key + " at line " +
                       std::to_string(it->second.second) + ": " + it->second.first);
    }
  }

  void check_all_consumed() const {
    for (const auto& [key, value] : values) {
      if (!consumed.count(key)) {
        throw ParseError("config: unknown key " + key + " at line " +
                         std::to_string(value.second));
      }
    }
  }
};

KvReader read_kv(const std::string& text) {
  KvReader kv;
  std::istringstream in(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config: expected key = value at line " + std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config: empty key at line " + std::to_string(line_no));
    if (kv.values.count(key)) {
      throw ParseError("config: duplicate key " + key + " at line " + std::to_string(line_no));
    }
    kv.values[key] = {value, line_no};
  }
  return kv;
}

int64_t to_i64(const std::string& s) {
  size_t used = 0;
  const int64_t v = std::stoll(s, &used);
  if (used != s.size()) throw ParseError("trailing characters: " + s);
  return v;
}

uint64_t to_u64(const std::string& s) {
  size_t used = 0;
  const uint64_t v = std::stoull(s, &used);
  if (used != s.size()) throw ParseError("trailing characters: " + s);
  return v;
}

double to_f64(const std::string& s) {
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ParseError("trailing characters: " + s);
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ParseError("expected boolean: " + s);
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ParseError("unknown optimizer: " + s);
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

void apply_model_keys(KvReader& kv, ViTConfig& m) {
  kv.take("model.image_size", [&](const std::string& v) { m.image_size = to_i64(v); });
  kv.take("model.patch_size", [&](const std::string& v) { m.patch_size = to_i64(v); });
  kv.take("model.embed_dim", [&](const std::string& v) { m.embed_dim = to_i64(v); });
  kv.take("model.depth", [&](const std::string& v) { m.depth = to_i64(v); });
  kv.take("model.heads", [&](const std::string& v) { m.heads = to_i64(v); });
  kv.take("model.mlp_ratio", [&](const std::string& v) { m.mlp_ratio = to_i64(v); });
  kv.take("model.num_registers", [&](const std::string& v) { m.num_registers = to_i64(v); });
  kv.take("model.use_cls", [&](const std::string& v) { m.use_cls = to_bool(v); });
  kv.take("model.num_classes", [&](const std::string& v) { m.num_classes = to_i64(v); });
  kv.take("model.layernorm_eps", [&](const std::string& v) { m.layernorm_eps = to_f64(v); });
}

void write_model_keys(std::ostringstream& out, const ViTConfig& m) {
  out << "model.image_size = " << m.image_size << "\n";
  out << "model.patch_size = " << m.patch_size << "\n";
  out << "model.embed_dim = " << m.embed_dim << "\n";
  out << "model.depth = " << m.depth << "\n";
  out << "model.heads = " << m.heads << "\n";
  out << "model.mlp_ratio = " << m.mlp_ratio << "\n";
  out << "model.num_registers = " << m.num_registers << "\n";
  out << "model.use_cls = " << (m.use_cls ? "true" : "false") << "\n";
  out << "model.num_classes = " << m.num_classes << "\n";
  out << "model.layernorm_eps = " << m.layernorm_eps << "\n";
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  data.validate();
  analysis.validate();
  probe.validate();
  train.validate();
  repr.validate();
}

RunConfig parse_run_config(const std::string& text) {
  KvReader kv = read_kv(text);
  RunConfig c;
  apply_model_keys(kv, c.model);

  kv.take("data.classes", [&](const std::string& v) { c.data.classes = to_i64(v); });
  kv.take("data.per_class", [&](const std::string& v) { c.data.per_class = to_i64(v); });
  kv.take("data.val_per_class", [&](const std::string& v) { c.data.val_per_class = to_i64(v); });
  kv.take("data.image_size", [&](const std::string& v) { c.data.image_size = to_i64(v); });
  kv.take("data.seed", [&](const std::string& v) { c.data.seed = to_u64(v); });

  kv.take("analysis.sample_n", [&](const std::string& v) { c.analysis.sample_n = to_i64(v); });
  kv.take("analysis.percentile", [&](const std::string& v) { c.analysis.percentile = to_f64(v); });
  kv.take("analysis.seed", [&](const std::string& v) { c.analysis.seed = to_u64(v); });

  kv.take("probe.task", [&](const std::string& v) { c.probe.task = probe_task_from_string(v); });
  kv.take("probe.optimizer",
          [&](const std::string& v) { c.probe.optimizer = optimizer_from_string(v); });
  kv.take("probe.lr", [&](const std::string& v) { c.probe.lr = to_f64(v); });
  kv.take("probe.beta1", [&](const std::string& v) { c.probe.beta1 = to_f64(v); });
  kv.take("probe.beta2", [&](const std::string& v) { c.probe.beta2 = to_f64(v); });
  kv.take("probe.momentum", [&](const std::string& v) { c.probe.momentum = to_f64(v); });
  kv.take("probe.weight_decay", [&](const std::string& v) { c.probe.weight_decay = to_f64(v); });
  kv.take("probe.max_epochs", [&](const std::string& v) { c.probe.max_epochs = to_i64(v); });
  kv.take("probe.patience", [&](const std::string& v) { c.probe.patience = to_i64(v); });
  kv.take("probe.batch_size", [&](const std::string& v) { c.probe.batch_size = to_i64(v); });
  kv.take("probe.val_fraction", [&](const std::string& v) { c.probe.val_fraction = to_f64(v); });
  kv.take("probe.seed", [&](const std::string& v) { c.probe.seed = to_u64(v); });

  kv.take("train.epochs", [&](const std::string& v) { c.train.epochs = to_i64(v); });
  kv.take("train.batch_size", [&](const std::string& v) { c.train.batch_size = to_i64(v); });
  kv.take("train.lr", [&](const std::string& v) { c.train.lr = to_f64(v); });
  kv.take("train.optimizer",
          [&](const std::string& v) { c.train.optimizer = optimizer_from_string(v); });
  kv.take("train.seed", [&](const std::string& v) { c.train.seed = to_u64(v); });

  kv.take("repr.kind", [&](const std::string& v) { c.repr.kind = repr_kind_from_string(v); });
  kv.take("repr.epochs", [&](const std::string& v) { c.repr.epochs = to_i64(v); });
  kv.take("repr.lr", [&](const std::string& v) { c.repr.lr = to_f64(v); });
  kv.take("repr.batch_size", [&](const std::string& v) { c.repr.batch_size = to_i64(v); });
  kv.take("repr.seed", [&](const std::string& v) { c.repr.seed = to_u64(v); });

  kv.check_all_consumed();
  c.validate();
  return c;
}

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  write_model_keys(out, c.model);
  out << "data.classes = " << c.data.classes << "\n";
  out << "data.per_class = " << c.data.per_class << "\n";
  out << "data.val_per_class = " << c.data.val_per_class << "\n";
  out << "data.image_size = " << c.data.image_size << "\n";
  out << "data.seed = " << c.data.seed << "\n";
  out << "analysis.sample_n = " << c.analysis.sample_n << "\n";
  out << "analysis.percentile = " << c.analysis.percentile << "\n";
  out << "analysis.seed = " << c.analysis.seed << "\n";
  out << "probe.task = " << to_string(c.probe.task) << "\n";
  out << "probe.optimizer = " << to_string(c.probe.optimizer) << "\n";
  out << "probe.lr = " << c.probe.lr << "\n";
  out << "probe.beta1 = " << c.probe.beta1 << "\n";
  out << "probe.beta2 = " << c.probe.beta2 << "\n";
  out << "probe.momentum = " << c.probe.momentum << "\n";
  out << "probe.weight_decay = " << c.probe.weight_decay << "\n";
  out << "probe.max_epochs = " << c.probe.max_epochs << "\n";
  out << "probe.patience = " << c.probe.patience << "\n";
  out << "probe.batch_size = " << c.probe.batch_size << "\n";
  out << "probe.val_fraction = " << c.probe.val_fraction << "\n";
  out << "probe.seed = " << c.probe.seed << "\n";
  out << "train.epochs = " << c.train.epochs << "\n";
  out << "train.batch_size = " << c.train.batch_size << "\n";
  out << "train.lr = " << c.train.lr << "\n";
  out << "train.optimizer = " << to_string(c.train.optimizer) << "\n";
  out << "train.seed = " << c.train.seed << "\n";
  out << "repr.kind = " << to_string(c.repr.kind) << "\n";
  out << "repr.epochs = " << c.repr.epochs << "\n";
  out << "repr.lr = " << c.repr.lr << "\n";
  out << "repr.batch_size = " << c.repr.batch_size << "\n";
  out << "repr.seed = " << c.repr.seed << "\n";
  return out.str();
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

std::string serialize_vit_config(const ViTConfig& config) {
  std::ostringstream out;
  out.precision(17);
  write_model_keys(out, config);
  return out.str();
}

ViTConfig parse_vit_config(const std::string& text) {
  KvReader kv = read_kv(text);
  ViTConfig config;
  apply_model_keys(kv, config);
  kv.check_all_consumed();
  return config;
}

}  // namespace vitlab
