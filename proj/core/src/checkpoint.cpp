#include "ffnmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ffnmt/errors.hpp"

namespace ffnmt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw InputError("cannot write checkpoint " + path.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw InputError("failed writing checkpoint");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw InputError("cannot read checkpoint " + path_);
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw InputError("truncated checkpoint " + path_);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    bytes(s.data(), s.size());
    return s;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

void write_vocab(Writer& w, const Vocabulary& v) {
  w.u32(static_cast<std::uint32_t>(v.ranked().size()));
  for (const auto& t : v.ranked()) w.str(t);
}

Vocabulary read_vocab(Reader& r) {
  std::vector<std::string> tokens(r.u32());
  for (auto& t : tokens) t = r.str();
  return Vocabulary(std::move(tokens));
}

}  // namespace

std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "variant=" << variant_name(c.variant) << '\n'
     << "n_e=" << c.n_e << '\n'
     << "n_d=" << c.n_d << '\n'
     << "columns=" << c.columns << '\n'
     << "emb_dim=" << c.emb_dim << '\n'
     << "cell_width=" << c.cell_width << '\n'
     << "src_vocab_size=" << c.src_vocab_size << '\n'
     << "tgt_vocab_size=" << c.tgt_vocab_size << '\n'
     << "dropout=" << std::hexfloat << c.dropout << std::defaultfloat << '\n'
     << "attention_hidden=" << c.attention_hidden << '\n'
     << "projection_factor=" << c.projection_factor << '\n'
     << "ff_enabled=" << (c.ff_enabled ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("malformed model config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw InputError(std::string("model config lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.variant = parse_variant(get("variant"));
  c.n_e = std::stoi(get("n_e"));
  c.n_d = std::stoi(get("n_d"));
  c.columns = std::stoi(get("columns"));
  c.emb_dim = std::stoul(get("emb_dim"));
  c.cell_width = std::stoul(get("cell_width"));
  c.src_vocab_size = std::stoul(get("src_vocab_size"));
  c.tgt_vocab_size = std::stoul(get("tgt_vocab_size"));
  c.dropout = std::strtod(get("dropout").c_str(), nullptr);
  c.attention_hidden = std::stoul(get("attention_hidden"));
  c.projection_factor = std::stoul(get("projection_factor"));
  c.ff_enabled = get("ff_enabled") == "1";
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params,
                     const Vocabulary& source_vocab, const Vocabulary& target_vocab) {
  Writer w(path);
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(serialize_model_config(config));
  write_vocab(w, source_vocab);
  write_vocab(w, target_vocab);
  std::uint32_t count = 0;
  zip_model([&](const Parameter&) { ++count; }, params);
  w.u32(count);
  zip_model(
      [&](const Parameter& p) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) w.u64(d);
        w.bytes(p.value.data().data(), p.value.size() * sizeof(double));
      },
      params);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw InputError(path.string() + " is not an ffnmt checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = parse_model_config(r.str());
  ck.source_vocab = read_vocab(r);
  ck.target_vocab = read_vocab(r);
  ck.params = make_model_params(ck.config);
  const std::uint32_t count = r.u32();
  std::uint32_t expected = 0;
  zip_model([&](const Parameter&) { ++expected; }, ck.params);
  if (count != expected) {
    throw InputError("checkpoint holds " + std::to_string(count) + " parameters, configuration implies " +
                     std::to_string(expected));
  }
  zip_model(
      [&](Parameter& p) {
        const std::string name = r.str();
        if (name != p.name) throw InputError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
        if (shape != p.value.shape()) {
          throw InputError("parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                           shape_string(p.value.shape()));
        }
        r.bytes(p.value.data().data(), p.value.size() * sizeof(double));
      },
      ck.params);
  return ck;
}

}  // namespace ffnmt
