#include "sdcnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sdcnet {

namespace {

constexpr char kMagic[5] = {'S', 'D', 'C', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw DataError("checkpoint truncated at offset " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(std::uint8_t(buf[pos])) |
                      std::uint16_t(std::uint16_t(std::uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return std::uint8_t(buf[pos++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void append_tensor(std::string& out, const std::string& name, std::uint8_t kind, const Tensor& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(kind));
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  const char* raw = reinterpret_cast<const char*>(t.data.data());
  out.append(raw, t.data.size() * sizeof(double));
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const ExperimentConfig& cfg) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  const std::string config_json = serialize_config(cfg);
  put_u32(out, static_cast<std::uint32_t>(config_json.size()));
  out.append(config_json);

  const auto& params = model.params().params();
  const auto& buffers = model.params().buffers();
  put_u32(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& [name, t] : params) append_tensor(out, name, 0, *t);
  for (const auto& [name, t] : buffers) append_tensor(out, name, 1, *t);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);

  Reader r{buf, sizeof(kMagic)};
  const std::uint32_t config_len = r.u32();
  LoadedCheckpoint loaded;
  loaded.config = parse_config_text(r.bytes(config_len));

  const auto& cfg = loaded.config;
  const std::size_t classes = cfg.dataset == "blobs" ? cfg.blob_classes : 10;
  loaded.model = build_model(cfg.architecture, method_from_string(cfg.method),
                             cfg.leave_out_rate(), classes, cfg.seed);

  const std::uint32_t n_entries = r.u32();
  std::size_t filled = 0;
  for (std::uint32_t e = 0; e < n_entries; ++e) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const std::uint8_t kind = r.u8();
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    const std::size_t count = numel(shape);
    const std::string raw = r.bytes(count * sizeof(double));

    const auto& table =
        kind == 0 ? loaded.model->params().params() : loaded.model->params().buffers();
    auto it = table.find(name);
    if (it == table.end()) throw DataError("checkpoint has unknown tensor " + name);
    if (it->second->shape != shape)
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                      ", model expects " + shape_str(it->second->shape));
    std::memcpy(it->second->data.data(), raw.data(), raw.size());
    ++filled;
  }
  const std::size_t expected =
      loaded.model->params().params().size() + loaded.model->params().buffers().size();
  if (filled != expected)
    throw DataError("checkpoint fills " + std::to_string(filled) + " tensors, model has " +
                    std::to_string(expected));
  return loaded;
}

}  // namespace sdcnet
