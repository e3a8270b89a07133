#include "isplit/model.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace isplit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and wire formats assume a little-endian host");

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
    case LayerKind::tconv: return "tconv";
  }
  throw ConfigError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "relu") return LayerKind::relu;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "dense") return LayerKind::dense;
  if (s == "softmax") return LayerKind::softmax;
  if (s == "tconv") return LayerKind::tconv;
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::vector<int> infer_output_shape(const LayerSpec& layer, const std::vector<int>& in_shape) {
  auto fail = [&](const std::string& why) {
    throw ShapeError("layer '" + layer.name + "' (" + layer_kind_name(layer.kind) + "): " + why +
                     "; input shape " + TensorF::shape_string(in_shape));
  };
  switch (layer.kind) {
    case LayerKind::conv: {
      if (in_shape.size() != 3) fail("expects a rank-3 (C,H,W) input");
      const int h = in_shape[1], w = in_shape[2];
      if (h + 2 * layer.padding < layer.kernel || w + 2 * layer.padding < layer.kernel)
        fail("kernel exceeds padded input");
      const int hout = (h + 2 * layer.padding - layer.kernel) / layer.stride + 1;
      const int wout = (w + 2 * layer.padding - layer.kernel) / layer.stride + 1;
      if (hout < 1 || wout < 1) fail("produces empty output");
      return {layer.out_channels, hout, wout};
    }
    case LayerKind::tconv: {
      if (in_shape.size() != 3) fail("expects a rank-3 (C,H,W) input");
      const int hout =
          (in_shape[1] - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.out_pad_h;
      const int wout =
          (in_shape[2] - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.out_pad_w;
      if (hout < 1 || wout < 1) fail("produces empty output");
      return {layer.out_channels, hout, wout};
    }
    case LayerKind::relu:
      return in_shape;
    case LayerKind::softmax:
      if (in_shape.size() != 1) fail("expects a rank-1 input");
      return in_shape;
    case LayerKind::maxpool: {
      if (in_shape.size() != 3) fail("expects a rank-3 (C,H,W) input");
      if (in_shape[1] < layer.kernel || in_shape[2] < layer.kernel) fail("window exceeds input");
      return {in_shape[0], (in_shape[1] - layer.kernel) / layer.stride + 1,
              (in_shape[2] - layer.kernel) / layer.stride + 1};
    }
    case LayerKind::flatten:
      return {static_cast<int>(TensorF::shape_numel(in_shape))};
    case LayerKind::dense:
      if (in_shape.size() != 1) fail("expects a rank-1 input (flatten first)");
      return {layer.units};
  }
  fail("unhandled kind");
  return {};
}

std::vector<std::vector<int>> layer_param_shapes(const LayerSpec& layer,
                                                 const std::vector<int>& in_shape) {
  switch (layer.kind) {
    case LayerKind::conv:
      return {{layer.out_channels, in_shape[0], layer.kernel, layer.kernel}, {layer.out_channels}};
    case LayerKind::tconv:
      return {{in_shape[0], layer.out_channels, layer.kernel, layer.kernel}, {layer.out_channels}};
    case LayerKind::dense:
      return {{layer.units, in_shape[0]}, {layer.units}};
    default:
      return {};
  }
}

namespace {

int parse_int_field(const std::string& tok, std::size_t& pos, const std::string& what) {
  std::size_t start = pos;
  while (pos < tok.size() && std::isdigit(static_cast<unsigned char>(tok[pos]))) ++pos;
  if (pos == start) throw ConfigError("architecture token '" + tok + "': expected number for " + what);
  return std::stoi(tok.substr(start, pos - start));
}

LayerSpec parse_token(const std::string& raw, int class_count) {
  LayerSpec l;
  std::string tok = raw;
  if (auto at = tok.find('@'); at != std::string::npos) {
    l.name = tok.substr(0, at);
    tok = tok.substr(at + 1);
  }
  const auto colon = tok.find(':');
  const std::string kind = colon == std::string::npos ? tok : tok.substr(0, colon);
  std::string args = colon == std::string::npos ? "" : tok.substr(colon + 1);
  l.kind = layer_kind_from_name(kind);
  std::size_t pos = 0;
  auto expect_args = [&](bool need) {
    if (need && args.empty()) throw ConfigError("architecture token '" + raw + "' needs arguments");
    if (!need && !args.empty()) throw ConfigError("architecture token '" + raw + "' takes no arguments");
  };
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::tconv: {
      expect_args(true);
      l.out_channels = parse_int_field(args, pos, "out channels");
      l.kernel = 3;
      l.stride = 1;
      l.padding = 0;
      while (pos < args.size()) {
        const char c = args[pos++];
        if (c == 'k') l.kernel = parse_int_field(args, pos, "kernel");
        else if (c == 's') l.stride = parse_int_field(args, pos, "stride");
        else if (c == 'p') l.padding = parse_int_field(args, pos, "padding");
        else if (c == 'o') {
          l.out_pad_h = parse_int_field(args, pos, "output padding h");
          if (pos < args.size() && args[pos] == 'x') {
            ++pos;
            l.out_pad_w = parse_int_field(args, pos, "output padding w");
          } else {
            l.out_pad_w = l.out_pad_h;
          }
        } else
          throw ConfigError("architecture token '" + raw + "': unknown field '" + c + "'");
      }
      break;
    }
    case LayerKind::maxpool: {
      expect_args(true);
      l.kernel = parse_int_field(args, pos, "window");
      l.stride = l.kernel;
      if (pos < args.size() && args[pos] == 's') {
        ++pos;
        l.stride = parse_int_field(args, pos, "stride");
      }
      if (pos != args.size()) throw ConfigError("architecture token '" + raw + "': trailing junk");
      break;
    }
    case LayerKind::dense: {
      expect_args(true);
      if (args == "C") {
        if (class_count < 1) throw ConfigError("dense:C used without a class count");
        l.units = class_count;
      } else {
        l.units = parse_int_field(args, pos, "units");
        if (pos != args.size()) throw ConfigError("architecture token '" + raw + "': trailing junk");
      }
      break;
    }
    case LayerKind::relu:
    case LayerKind::flatten:
    case LayerKind::softmax:
      expect_args(false);
      break;
  }
  return l;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',' || c == '\n' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

std::string expand_architecture(const std::string& architecture, int /*class_count*/) {
  auto vgg_blocks = [](const std::vector<int>& channels) {
    std::ostringstream os;
    for (std::size_t b = 0; b < channels.size(); ++b) {
      const std::string blk = "block" + std::to_string(b + 1);
      os << blk << "_conv1@conv:" << channels[b] << "k3s1p1," << blk << "_relu1@relu," << blk
         << "_pool@maxpool:2s2,";
    }
    os << "flatten@flatten,fc1@dense:64,fc1_relu@relu,fc2@dense:C";
    return os.str();
  };
  if (architecture == "vgg-micro") return vgg_blocks({8, 16, 32, 32});
  if (architecture == "vgg-nano") return vgg_blocks({8, 16});
  if (architecture == "mlp-baseline") return "flatten@flatten,fc1@dense:64,fc1_relu@relu,fc2@dense:C";
  return architecture;
}

Model build_model(const std::string& architecture, const std::vector<int>& input_shape,
                  int class_count, std::uint64_t seed) {
  const std::string text = expand_architecture(architecture, class_count);
  const std::vector<std::string> tokens = split_tokens(text);
  if (tokens.empty()) throw ConfigError("empty architecture");
  Model m;
  m.input_shape = input_shape;
  m.class_count = class_count;
  m.meta.architecture = architecture;
  m.meta.seed = seed;

  Rng rng(seed);
  std::vector<int> cur = input_shape;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    LayerSpec l = parse_token(tokens[i], class_count);
    l.index = static_cast<int>(i);
    if (l.name.empty()) l.name = layer_kind_name(l.kind) + std::to_string(i);
    l.output_shape = infer_output_shape(l, cur);

    std::vector<TensorF> params;
    for (const auto& pshape : layer_param_shapes(l, cur)) {
      TensorF p(pshape);
      long long fan_in = 0;
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::tconv:
          fan_in = static_cast<long long>(cur[0]) * l.kernel * l.kernel;
          break;
        case LayerKind::dense:
          fan_in = cur[0];
          break;
        default:
          break;
      }
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (auto& v : p.data) v = static_cast<float>(rng.uniform(-bound, bound));
      params.push_back(std::move(p));
    }
    cur = l.output_shape;
    m.layers.push_back(std::move(l));
    m.params.push_back(std::move(params));
  }
  if (class_count > 0 && (cur.size() != 1 || cur[0] != class_count))
    throw ShapeError("architecture output shape " + TensorF::shape_string(cur) +
                     " does not produce " + std::to_string(class_count) + " class logits");
  return m;
}

namespace {

constexpr char kCheckpointMagic[4] = {'I', 'S', 'P', 'L'};
constexpr std::uint16_t kCheckpointVersion = 1;

void append_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

void append_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) { append_bytes(buf, &v, 2); }
void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) { append_bytes(buf, &v, 4); }

std::uint32_t crc_of(const std::vector<std::uint8_t>& buf, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(n)));
}

nlohmann::json layer_to_json(const LayerSpec& l) {
  return nlohmann::json{{"index", l.index},
                        {"name", l.name},
                        {"kind", layer_kind_name(l.kind)},
                        {"out_channels", l.out_channels},
                        {"kernel", l.kernel},
                        {"stride", l.stride},
                        {"padding", l.padding},
                        {"out_pad", {l.out_pad_h, l.out_pad_w}},
                        {"units", l.units},
                        {"output_shape", l.output_shape}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.index = j.at("index").get<int>();
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  l.out_channels = j.at("out_channels").get<int>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.out_pad_h = j.at("out_pad").at(0).get<int>();
  l.out_pad_w = j.at("out_pad").at(1).get<int>();
  l.units = j.at("units").get<int>();
  l.output_shape = j.at("output_shape").get<std::vector<int>>();
  return l;
}

}  // namespace

void checkpoint_save(const Model& model, const std::string& path) {
  nlohmann::json header;
  header["class_count"] = model.class_count;
  header["input_shape"] = model.input_shape;
  header["meta"] = {{"architecture", model.meta.architecture},
                    {"dataset_id", model.meta.dataset_id},
                    {"epochs", model.meta.epochs},
                    {"seed", model.meta.seed}};
  nlohmann::json layers = nlohmann::json::array();
  nlohmann::json param_shapes = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    layers.push_back(layer_to_json(model.layers[i]));
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& p : model.params[i]) shapes.push_back(p.shape);
    param_shapes.push_back(shapes);
  }
  header["layers"] = layers;
  header["param_shapes"] = param_shapes;
  const std::string json_text = header.dump();

  std::vector<std::uint8_t> buf;
  append_bytes(buf, kCheckpointMagic, 4);
  append_u16(buf, kCheckpointVersion);
  append_u32(buf, static_cast<std::uint32_t>(json_text.size()));
  append_bytes(buf, json_text.data(), json_text.size());
  for (const auto& layer_params : model.params)
    for (const auto& p : layer_params)
      append_bytes(buf, p.data.data(), p.data.size() * sizeof(float));
  append_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Code::io, "cannot open '" + path + "' for write");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError(CheckpointError::Code::io, "short write to '" + path + "'");
}

Model checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Code::io, "cannot open '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 + 2 + 4 + 4)
    throw CheckpointError(CheckpointError::Code::truncated, "'" + path + "' is truncated");
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Code::bad_magic, "'" + path + "' is not a checkpoint");
  std::uint16_t version;
  std::memcpy(&version, buf.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Code::bad_version,
                          "unsupported checkpoint version " + std::to_string(version));
  std::uint32_t json_len;
  std::memcpy(&json_len, buf.data() + 6, 4);
  std::size_t pos = 10;
  if (pos + json_len + 4 > buf.size())
    throw CheckpointError(CheckpointError::Code::truncated, "'" + path + "' is truncated");

  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (stored_crc != crc_of(buf, buf.size() - 4))
    throw CheckpointError(CheckpointError::Code::checksum, "checksum mismatch in '" + path + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + pos, buf.begin() + pos + json_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Code::bad_header, e.what());
  }
  pos += json_len;

  Model m;
  try {
    m.class_count = header.at("class_count").get<int>();
    m.input_shape = header.at("input_shape").get<std::vector<int>>();
    m.meta.architecture = header.at("meta").at("architecture").get<std::string>();
    m.meta.dataset_id = header.at("meta").at("dataset_id").get<std::string>();
    m.meta.epochs = header.at("meta").at("epochs").get<int>();
    m.meta.seed = header.at("meta").at("seed").get<std::uint64_t>();
    for (const auto& jl : header.at("layers")) m.layers.push_back(layer_from_json(jl));
    for (const auto& shapes : header.at("param_shapes")) {
      std::vector<TensorF> params;
      for (const auto& shp : shapes) params.emplace_back(shp.get<std::vector<int>>());
      m.params.push_back(std::move(params));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Code::bad_header, e.what());
  }
  if (m.params.size() != m.layers.size())
    throw CheckpointError(CheckpointError::Code::bad_header, "layer/param table mismatch");

  for (auto& layer_params : m.params) {
    for (auto& p : layer_params) {
      const std::size_t bytes = p.data.size() * sizeof(float);
      if (pos + bytes + 4 > buf.size())
        throw CheckpointError(CheckpointError::Code::truncated, "'" + path + "' is truncated");
      std::memcpy(p.data.data(), buf.data() + pos, bytes);
      pos += bytes;
    }
  }
  if (pos + 4 != buf.size())
    throw CheckpointError(CheckpointError::Code::bad_header, "trailing bytes in '" + path + "'");
  return m;
}

}  // namespace isplit
