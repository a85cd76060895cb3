#include "stransformer/config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace stf {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': '" + v + "'");
  }
}

struct KeyDef {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::vector<KeyDef> key_table() {
  std::vector<KeyDef> keys;
  auto add = [&keys](std::string name,
                     std::function<std::string(const RunConfig&)> get,
                     std::function<void(RunConfig&, const std::string&)> set) {
    keys.push_back({std::move(name), std::move(get), std::move(set)});
  };

#define INT_KEY(NAME, FIELD)                                                  \
  add(NAME,                                                                   \
      [](const RunConfig& c) { return std::to_string(c.FIELD); },             \
      [](RunConfig& c, const std::string& v) {                                \
        c.FIELD = static_cast<decltype(c.FIELD)>(parse_int(NAME, v));         \
      })
#define DBL_KEY(NAME, FIELD)                                       \
  add(NAME, [](const RunConfig& c) { return fmt_double(c.FIELD); },\
      [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); })

  add("seed",
      [](const RunConfig& c) { return std::to_string(c.seed); },
      [](RunConfig& c, const std::string& v) {
        try {
          c.seed = std::stoull(v);
        } catch (const std::exception&) {
          throw ConfigError("config: bad integer for 'seed': '" + v + "'");
        }
      });

  add("model.symbols",
      [](const RunConfig& c) {
        std::string out;
        for (size_t i = 0; i < c.model.symbols.size(); ++i) {
          if (i) out += ",";
          out += c.model.symbols[i];
        }
        return out;
      },
      [](RunConfig& c, const std::string& v) {
        c.model.symbols.clear();
        std::string cur;
        for (char ch : v) {
          if (ch == ',') {
            if (!cur.empty()) c.model.symbols.push_back(cur);
            cur.clear();
          } else if (ch != ' ') {
            cur += ch;
          }
        }
        if (!cur.empty()) c.model.symbols.push_back(cur);
        if (!c.model.symbols.empty()) {
          c.model.n_phonemes = static_cast<int64_t>(c.model.symbols.size());
        }
      });
  INT_KEY("model.n_phonemes", model.n_phonemes);
  INT_KEY("model.n_sentence_types", model.n_sentence_types);
  INT_KEY("model.n_layers_enc", model.n_layers_enc);
  INT_KEY("model.n_layers_dec", model.n_layers_dec);
  INT_KEY("model.d_model", model.d_model);
  INT_KEY("model.d_ff", model.d_ff);
  INT_KEY("model.n_heads_self", model.n_heads_self);
  INT_KEY("model.n_heads_encdec", model.n_heads_encdec);
  INT_KEY("model.n_mels", model.n_mels);
  INT_KEY("model.chunk_size", model.chunk_size);
  INT_KEY("model.chunk_window", model.chunk_window);
  INT_KEY("model.enc_mem_capacity", model.enc_mem_capacity);
  INT_KEY("model.dec_mem_capacity", model.dec_mem_capacity);
  INT_KEY("model.l_max", model.l_max);
  DBL_KEY("model.dropout", model.dropout);
  INT_KEY("model.reduction_factor", model.reduction_factor);
  DBL_KEY("model.stop_pos_weight", model.stop_pos_weight);
  DBL_KEY("model.loss_w_mel", model.loss_w_mel);
  DBL_KEY("model.loss_w_stop", model.loss_w_stop);
  DBL_KEY("model.loss_w_chunk_stop", model.loss_w_chunk_stop);
  DBL_KEY("model.loss_w_rate", model.loss_w_rate);
  DBL_KEY("model.stop_threshold", model.stop_threshold);
  INT_KEY("model.max_frames_per_segment", model.max_frames_per_segment);
  add("model.stop_rule",
      [](const RunConfig& c) {
        return c.model.stop_rule == StopRule::kLiteral ? "literal" : "selector";
      },
      [](RunConfig& c, const std::string& v) {
        if (v == "selector") {
          c.model.stop_rule = StopRule::kSelector;
        } else if (v == "literal") {
          c.model.stop_rule = StopRule::kLiteral;
        } else {
          throw ConfigError("config: model.stop_rule must be selector|literal, got '" +
                            v + "'");
        }
      });
  INT_KEY("model.attn_dump_layer", model.attn_dump_layer);

  DBL_KEY("optim.beta1", optim.beta1);
  DBL_KEY("optim.beta2", optim.beta2);
  DBL_KEY("optim.eps", optim.eps);
  DBL_KEY("optim.lr_base", optim.schedule.base);
  INT_KEY("optim.warmup_steps", optim.schedule.warmup_steps);
  DBL_KEY("optim.decay_factor", optim.schedule.decay_factor);
  INT_KEY("optim.decay_interval", optim.schedule.decay_interval);

  INT_KEY("train.batch_size", train.batch_size);
  INT_KEY("train.max_steps", train.max_steps);
  INT_KEY("train.checkpoint_interval", train.checkpoint_interval);
  DBL_KEY("train.grad_clip", train.grad_clip);

  INT_KEY("toy.vocab_size", toy.vocab_size);
  INT_KEY("toy.dur_min", toy.dur_min);
  INT_KEY("toy.dur_max", toy.dur_max);
  INT_KEY("toy.punct_duration", toy.punct_duration);
  DBL_KEY("toy.noise_amp", toy.noise_amp);
  INT_KEY("toy.utt_min_symbols", toy.utt_min_symbols);
  INT_KEY("toy.utt_max_symbols", toy.utt_max_symbols);
  DBL_KEY("toy.punct_rate", toy.punct_rate);
  DBL_KEY("toy.wb_rate", toy.wb_rate);
  INT_KEY("toy.n_sentence_types", toy.n_sentence_types);
  DBL_KEY("toy.sentence_tilt", toy.sentence_tilt);
  INT_KEY("toy.duration_jitter", toy.duration_jitter);
  INT_KEY("toy.n_utts", toy.n_utts);
  add("toy.seed",
      [](const RunConfig& c) { return std::to_string(c.toy.seed); },
      [](RunConfig& c, const std::string& v) {
        try {
          c.toy.seed = std::stoull(v);
        } catch (const std::exception&) {
          throw ConfigError("config: bad integer for 'toy.seed': '" + v + "'");
        }
      });

#undef INT_KEY
#undef DBL_KEY
  return keys;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  auto keys = key_table();
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (auto& k : keys) {
      if (k.name == key) {
        k.set(cfg, value);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string canonical_config_text(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : key_table()) {
    os << k.name << " = " << k.get(cfg) << "\n";
  }
  return os.str();
}

}  // namespace stf
