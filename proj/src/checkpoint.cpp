#include "nmt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/textfmt.hpp"

namespace nmt {

namespace {

constexpr const char* kMagic = "deskmt checkpoint v1";

void put_f64(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64(const std::string& bytes, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]))
            << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

std::string shape_line(const std::string& name, const Shape& shape) {
  std::string line = name;
  for (auto d : shape) line += " " + std::to_string(d);
  return line;
}

std::string dims_text(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Sequential reader over the text header of a checkpoint file.
class Cursor {
 public:
  explicit Cursor(const std::string& text) : text_(text) {}

  std::string next_line() {
    const auto nl = text_.find('\n', pos_);
    if (nl == std::string::npos) throw IoError("checkpoint header ends unexpectedly");
    std::string line = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return line;
  }

  // Value of a "key value..." line; the value may itself contain spaces.
  std::string value(const std::string& key) {
    const std::string line = next_line();
    if (line == key) return "";
    if (line.size() <= key.size() || line.compare(0, key.size(), key) != 0 ||
        line[key.size()] != ' ') {
      throw IoError("checkpoint header: expected '" + key + " ...', found '" + line + "'");
    }
    return line.substr(key.size() + 1);
  }

  std::int64_t value_int(const std::string& key) { return parse_int(value(key)); }

  bool value_bool(const std::string& key) {
    const std::string v = value(key);
    if (v == "0") return false;
    if (v == "1") return true;
    throw IoError("checkpoint header: '" + key + "' must be 0 or 1, found '" + v + "'");
  }

  std::size_t offset() const { return pos_; }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string field;
  while (is >> field) out.push_back(field);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.src_vocab != ckpt.vocab.size() || cfg.tgt_vocab != ckpt.vocab.size()) {
    throw ContractError("checkpoint vocabulary size disagrees with the model config");
  }

  std::string out;
  out += std::string(kMagic) + "\n";
  out += "variant " + variant_name(cfg.variant) + "\n";
  out += "step " + std::to_string(ckpt.step) + "\n";
  out += "rng " + ckpt.rng_state + "\n";
  out += "d_model " + std::to_string(cfg.d_model) + "\n";
  out += "d_ffn " + std::to_string(cfg.d_ffn) + "\n";
  out += "n_heads " + std::to_string(cfg.n_heads) + "\n";
  out += "n_layers " + std::to_string(cfg.n_layers) + "\n";
  out += "src_vocab " + std::to_string(cfg.src_vocab) + "\n";
  out += "tgt_vocab " + std::to_string(cfg.tgt_vocab) + "\n";
  out += "dropout " + fmt_double(cfg.dropout) + "\n";
  out += "max_len " + std::to_string(cfg.max_len) + "\n";
  out += "use_positions " + std::string(cfg.use_positions ? "1" : "0") + "\n";
  out += "tie_output " + std::string(cfg.tie_output ? "1" : "0") + "\n";
  out += "future_cell_bias " + std::string(cfg.future_cell_bias ? "1" : "0") + "\n";
  out += "separate_future_embedding " + std::string(cfg.separate_future_embedding ? "1" : "0") + "\n";

  const auto vocab_lines = ckpt.vocab.to_lines();
  out += "vocab " + std::to_string(vocab_lines.size()) + "\n";
  for (const auto& line : vocab_lines) out += line + "\n";

  out += "optimizer " + std::string(ckpt.has_optimizer ? "1" : "0") + "\n";
  if (ckpt.has_optimizer) {
    out += "adam " + fmt_double(ckpt.adam_beta1) + " " + fmt_double(ckpt.adam_beta2) + " " +
           fmt_double(ckpt.adam_eps) + " " + std::to_string(ckpt.adam_steps) + "\n";
  }

  std::vector<std::pair<std::string, Tensor>> table;
  ckpt.params.visit(
      [&](const std::string& name, const Tensor& t) { table.emplace_back(name, t); });
  out += "params " + std::to_string(table.size()) + "\n";
  for (const auto& [name, t] : table) out += shape_line(name, t.shape()) + "\n";
  out += "payload\n";

  for (const auto& [name, t] : table) {
    for (double v : t.data()) put_f64(out, v);
  }
  if (ckpt.has_optimizer) {
    for (const auto& [name, t] : table) {
      const auto it = ckpt.adam_slots.find(name);
      const std::size_t n = t.data().size();
      if (it != ckpt.adam_slots.end() && !it->second.m.empty()) {
        if (it->second.m.size() != n || it->second.v.size() != n) {
          throw ContractError("checkpoint optimizer slot '" + name + "' has the wrong size");
        }
        for (double v : it->second.m) put_f64(out, v);
        for (double v : it->second.v) put_f64(out, v);
      } else {
        for (std::size_t i = 0; i < 2 * n; ++i) put_f64(out, 0.0);
      }
    }
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string file = buf.str();

  Checkpoint ckpt;
  Cursor cur(file);
  std::vector<std::pair<std::string, Shape>> table;
  try {
    if (cur.next_line() != kMagic) throw IoError("not a checkpoint file: " + path);
    ckpt.config.variant = variant_from_name(cur.value("variant"));
    ckpt.step = cur.value_int("step");
    ckpt.rng_state = cur.value("rng");
    ckpt.config.d_model = cur.value_int("d_model");
    ckpt.config.d_ffn = cur.value_int("d_ffn");
    ckpt.config.n_heads = static_cast<int>(cur.value_int("n_heads"));
    ckpt.config.n_layers = static_cast<int>(cur.value_int("n_layers"));
    ckpt.config.src_vocab = cur.value_int("src_vocab");
    ckpt.config.tgt_vocab = cur.value_int("tgt_vocab");
    ckpt.config.dropout = parse_double(cur.value("dropout"));
    ckpt.config.max_len = cur.value_int("max_len");
    ckpt.config.use_positions = cur.value_bool("use_positions");
    ckpt.config.tie_output = cur.value_bool("tie_output");
    ckpt.config.future_cell_bias = cur.value_bool("future_cell_bias");
    ckpt.config.separate_future_embedding = cur.value_bool("separate_future_embedding");

    const std::int64_t vocab_count = cur.value_int("vocab");
    std::vector<std::string> vocab_lines;
    vocab_lines.reserve(static_cast<std::size_t>(vocab_count));
    for (std::int64_t i = 0; i < vocab_count; ++i) vocab_lines.push_back(cur.next_line());
    try {
      ckpt.vocab = Vocabulary::from_lines(vocab_lines);
    } catch (const InputError& e) {
      throw IoError("checkpoint vocabulary: " + std::string(e.what()));
    }

    ckpt.has_optimizer = cur.value_bool("optimizer");
    if (ckpt.has_optimizer) {
      const auto fields = split_fields(cur.value("adam"));
      if (fields.size() != 4) throw IoError("checkpoint header: malformed adam line");
      ckpt.adam_beta1 = parse_double(fields[0]);
      ckpt.adam_beta2 = parse_double(fields[1]);
      ckpt.adam_eps = parse_double(fields[2]);
      ckpt.adam_steps = parse_int(fields[3]);
    }

    const std::int64_t param_count = cur.value_int("params");
    for (std::int64_t i = 0; i < param_count; ++i) {
      const auto fields = split_fields(cur.next_line());
      if (fields.size() < 2) throw IoError("checkpoint header: malformed parameter line");
      Shape shape;
      for (std::size_t f = 1; f < fields.size(); ++f) shape.push_back(parse_int(fields[f]));
      table.emplace_back(fields[0], std::move(shape));
    }
    if (cur.next_line() != "payload") {
      throw IoError("checkpoint header: missing payload marker");
    }
  } catch (const InputError& e) {
    throw IoError("malformed checkpoint header: " + std::string(e.what()));
  }

  ckpt.config.validate();
  ckpt.params = ModelParams::init(ckpt.config, 0);

  std::vector<std::pair<std::string, Tensor>> expected;
  ckpt.params.visit(
      [&](const std::string& name, Tensor& t) { expected.emplace_back(name, t); });
  if (expected.size() != table.size()) {
    throw DimError("checkpoint lists " + std::to_string(table.size()) + " tensors, config requires " +
                   std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].first != expected[i].first) {
      throw DimError("checkpoint tensor '" + table[i].first + "' does not match expected '" +
                     expected[i].first + "'");
    }
    if (table[i].second != expected[i].second.shape()) {
      throw DimError("checkpoint tensor '" + table[i].first + "' has shape " +
                     dims_text(table[i].second) + " but the config requires " +
                     dims_text(expected[i].second.shape()));
    }
  }

  std::int64_t payload_doubles = 0;
  for (const auto& [name, t] : expected) payload_doubles += t.numel();
  if (ckpt.has_optimizer) payload_doubles *= 3;
  const std::size_t payload_bytes = static_cast<std::size_t>(payload_doubles) * 8;
  const std::size_t avail = file.size() - cur.offset();
  if (avail < payload_bytes) {
    throw IoError("truncated checkpoint payload: need " + std::to_string(payload_bytes) +
                  " bytes, found " + std::to_string(avail));
  }
  if (avail > payload_bytes) {
    throw IoError("trailing data after checkpoint payload");
  }

  std::size_t pos = cur.offset();
  for (auto& [name, t] : expected) {
    auto& data = t.node()->data;
    for (auto& v : data) {
      v = get_f64(file, pos);
      pos += 8;
    }
  }
  if (ckpt.has_optimizer) {
    for (auto& [name, t] : expected) {
      AdamSlots slots;
      const std::size_t n = t.data().size();
      slots.m.resize(n);
      slots.v.resize(n);
      for (auto& v : slots.m) {
        v = get_f64(file, pos);
        pos += 8;
      }
      for (auto& v : slots.v) {
        v = get_f64(file, pos);
        pos += 8;
      }
      ckpt.adam_slots.emplace(name, std::move(slots));
    }
  }
  return ckpt;
}

}  // namespace nmt
