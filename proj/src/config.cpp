#include "dgreid/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dgreid/checkpoint.hpp"
#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

const std::vector<SchemaEntry> kSchema = {
    {"run", "seed", "0", "root seed for every random stream"},
    {"run", "output_dir", "runs/desk", "directory for data, checkpoints, logs and results"},

    {"data", "source_manifests", "",
     "comma-separated source manifests; empty = synthetic data under <output_dir>/data"},
    {"data", "target_manifests", "", "comma-separated target manifests"},
    {"data", "target_protocols", "all",
     "split protocol per target (all, grid, ilids, prid, viper), or one for every target"},

    {"synthetic", "source_domains", "3", "number of synthetic source domains"},
    {"synthetic", "ids_per_domain", "20", "identities per source domain"},
    {"synthetic", "images_per_id", "8", "images per source identity"},
    {"synthetic", "target_domains", "1", "number of held-out synthetic domains"},
    {"synthetic", "target_ids", "50", "identities per held-out domain"},
    {"synthetic", "target_images_per_id", "4", "images per held-out identity"},
    {"synthetic", "height", "256", "rendered image height"},
    {"synthetic", "width", "128", "rendered image width"},

    {"model", "backbone", "tiny", "tiny or resnet50"},
    {"model", "feature_dim", "auto", "extractor output size (auto: 64 tiny, 2048 resnet50)"},
    {"model", "embedding_dim", "auto", "encoder output size (auto: 32 tiny, 512 resnet50)"},
    {"model", "input_height", "256", "network input height"},
    {"model", "input_width", "128", "network input width"},
    {"model", "instance_norm", "true", "instance normalization in the global extractor"},

    {"pretrain", "epochs", "10", "stage-1 epochs per source domain"},
    {"pretrain", "lr_drop_epoch", "7", "stage-1 epochs after this one use the dropped rate"},
    {"pretrain", "learning_rate", "0.01", "stage-1 initial learning rate"},
    {"pretrain", "dropped_learning_rate", "0.001", "stage-1 rate after the drop"},

    {"train", "epochs", "15", "stage-2 epochs"},
    {"train", "lr_drop_epoch", "10", "stage-2 epochs after this one use the dropped rate"},
    {"train", "learning_rate", "0.01", "stage-2 initial learning rate"},
    {"train", "dropped_learning_rate", "0.001", "stage-2 rate after the drop"},
    {"train", "momentum", "0.9", "SGD momentum (both stages)"},
    {"train", "weight_decay", "0.0005", "weight decay on conv/linear weights (both stages)"},
    {"train", "bn_momentum", "0.1", "running-statistics update rate"},
    {"train", "lambda_tri", "0.2", "triplet loss weight"},
    {"train", "lambda_consis", "0.01", "consistency loss weight"},
    {"train", "margin", "0.3", "triplet margin"},
    {"train", "smoothing", "0.1", "label smoothing epsilon"},
    {"train", "smoothing_variant", "off_class",
     "off_class (eps/(C-1) per wrong class) or uniform (eps/C everywhere)"},
    {"train", "identities_per_batch", "4", "P"},
    {"train", "images_per_identity", "4", "K"},
    {"train", "augment", "true", "random flip and padded crop"},
    {"train", "flip_probability", "0.5", "horizontal flip probability"},
    {"train", "padding", "10", "crop padding in pixels"},
    {"train", "norm_mean", "0.485,0.456,0.406", "per-channel mean after unit scaling"},
    {"train", "norm_std", "0.229,0.224,0.225", "per-channel std after unit scaling"},

    {"eval", "num_splits", "10", "random single-shot splits per target"},
    {"eval", "max_rank", "0", "length of the reported CMC curve (0: gallery size)"},
    {"eval", "cross_camera", "false", "ignore same-camera gallery matches"},

    {"ablation", "disable_tri", "false", "set lambda_tri to 0"},
    {"ablation", "disable_consis", "false", "set lambda_consis to 0"},
    {"ablation", "baseline_only", "false",
     "single extractor trained with cross-entropy only (no stage 1)"},
};

namespace {

std::string env_name(const std::string& section, const std::string& key) {
  std::string name = "DGREID_" + section + "_" + key;
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return name;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse(const ConfigValues& v, const std::string& name) {
  const std::string& text = v.at(name);
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config " + name + ": expected a boolean, got '" + text + "'");
  } else {
    if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text[0] == '-') {
        throw ConfigError("config " + name + ": expected a non-negative number, got '" +
                          text + "'");
      }
    }
    try {
      return boost::lexical_cast<T>(text);
    } catch (const boost::bad_lexical_cast&) {
      throw ConfigError("config " + name + ": cannot parse '" + text + "'");
    }
  }
}

std::array<double, 3> parse_triple(const ConfigValues& v, const std::string& name) {
  const auto items = split_list(v.at(name));
  if (items.size() != 3) throw ConfigError("config " + name + ": expected three values");
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    try {
      out[c] = boost::lexical_cast<double>(items[c]);
    } catch (const boost::bad_lexical_cast&) {
      throw ConfigError("config " + name + ": cannot parse '" + items[c] + "'");
    }
  }
  return out;
}

template <typename T>
std::string str(T value) {
  if constexpr (std::is_same_v<T, bool>) {
    return value ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, r.ptr);
  } else {
    return boost::lexical_cast<std::string>(value);
  }
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

}  // namespace

ConfigValues read_config_values(const fs::path* file) {
  ConfigValues values;
  for (const auto& e : kSchema) values[e.section + "." + e.key] = e.default_value;

  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(file->string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config " + file->string() + ": " + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError("config " + file->string() + ": key '" + section +
                          "' outside a section");
      }
      for (const auto& [key, value] : body) {
        const std::string name = section + "." + key;
        if (!values.contains(name)) {
          throw ConfigError("config " + file->string() + ": unknown key '" + name + "'");
        }
        values[name] = trim(value.data());
      }
    }
  }

  for (const auto& e : kSchema) {
    if (const char* env = std::getenv(env_name(e.section, e.key).c_str())) {
      values[e.section + "." + e.key] = trim(env);
    }
  }
  return values;
}

ExperimentConfig config_from_values(const ConfigValues& v) {
  for (const auto& [name, value] : v) {
    const bool known = std::any_of(kSchema.begin(), kSchema.end(), [&](const SchemaEntry& e) {
      return e.section + "." + e.key == name;
    });
    if (!known) throw ConfigError("unknown config key '" + name + "'");
  }
  ExperimentConfig c;
  c.seed = parse<std::uint64_t>(v, "run.seed");
  c.output_dir = v.at("run.output_dir");

  for (const auto& s : split_list(v.at("data.source_manifests"))) c.source_manifests.push_back(s);
  for (const auto& s : split_list(v.at("data.target_manifests"))) c.target_manifests.push_back(s);
  c.target_protocols = split_list(v.at("data.target_protocols"));

  auto& syn = c.synthetic;
  syn.source_domains = parse<std::size_t>(v, "synthetic.source_domains");
  syn.ids_per_domain = parse<std::size_t>(v, "synthetic.ids_per_domain");
  syn.images_per_id = parse<std::size_t>(v, "synthetic.images_per_id");
  syn.target_domains = parse<std::size_t>(v, "synthetic.target_domains");
  syn.target_ids = parse<std::size_t>(v, "synthetic.target_ids");
  syn.target_images_per_id = parse<std::size_t>(v, "synthetic.target_images_per_id");
  syn.height = parse<std::size_t>(v, "synthetic.height");
  syn.width = parse<std::size_t>(v, "synthetic.width");

  const BackboneKind kind = backbone_kind_from_string(v.at("model.backbone"));
  c.model = kind == BackboneKind::kTiny ? ModelConfig::tiny() : ModelConfig::resnet50();
  if (v.at("model.feature_dim") != "auto") {
    c.model.global_backbone.feature_dim = c.model.domain_backbone.feature_dim =
        parse<std::size_t>(v, "model.feature_dim");
  }
  if (v.at("model.embedding_dim") != "auto") {
    c.model.embedding_dim = parse<std::size_t>(v, "model.embedding_dim");
  }
  for (auto* b : {&c.model.global_backbone, &c.model.domain_backbone}) {
    b->input_height = parse<std::size_t>(v, "model.input_height");
    b->input_width = parse<std::size_t>(v, "model.input_width");
  }
  c.model.global_backbone.instance_norm = parse<bool>(v, "model.instance_norm");

  TrainConfig& t = c.train;
  t.epochs = parse<int>(v, "train.epochs");
  t.lr_drop_epoch = parse<int>(v, "train.lr_drop_epoch");
  t.learning_rate = parse<double>(v, "train.learning_rate");
  t.dropped_learning_rate = parse<double>(v, "train.dropped_learning_rate");
  t.momentum = parse<double>(v, "train.momentum");
  t.weight_decay = parse<double>(v, "train.weight_decay");
  t.bn_momentum = parse<double>(v, "train.bn_momentum");
  t.weights.triplet = parse<double>(v, "train.lambda_tri");
  t.weights.consistency = parse<double>(v, "train.lambda_consis");
  t.weights.margin = parse<double>(v, "train.margin");
  t.weights.smoothing = parse<double>(v, "train.smoothing");
  const std::string variant = v.at("train.smoothing_variant");
  if (variant == "off_class") {
    t.smoothing_variant = SmoothingVariant::kOffClass;
  } else if (variant == "uniform") {
    t.smoothing_variant = SmoothingVariant::kUniform;
  } else {
    throw ConfigError("config train.smoothing_variant: expected off_class or uniform, got '" +
                      variant + "'");
  }
  t.identities_per_batch = parse<std::size_t>(v, "train.identities_per_batch");
  t.images_per_identity = parse<std::size_t>(v, "train.images_per_identity");
  t.augment = parse<bool>(v, "train.augment");
  t.augmentation.flip_probability = parse<double>(v, "train.flip_probability");
  t.augmentation.padding = parse<std::size_t>(v, "train.padding");
  t.normalization.mean = parse_triple(v, "train.norm_mean");
  t.normalization.stddev = parse_triple(v, "train.norm_std");
  t.seed = c.seed;

  c.pretrain = t;
  c.pretrain.epochs = parse<int>(v, "pretrain.epochs");
  c.pretrain.lr_drop_epoch = parse<int>(v, "pretrain.lr_drop_epoch");
  c.pretrain.learning_rate = parse<double>(v, "pretrain.learning_rate");
  c.pretrain.dropped_learning_rate = parse<double>(v, "pretrain.dropped_learning_rate");

  c.num_splits = parse<std::size_t>(v, "eval.num_splits");
  c.max_rank = parse<std::size_t>(v, "eval.max_rank");
  c.cross_camera = parse<bool>(v, "eval.cross_camera");

  c.disable_tri = parse<bool>(v, "ablation.disable_tri");
  c.disable_consis = parse<bool>(v, "ablation.disable_consis");
  c.baseline_only = parse<bool>(v, "ablation.baseline_only");
  c.validate();
  return c;
}

ConfigValues config_to_values(const ExperimentConfig& c) {
  ConfigValues v;
  auto paths = [](const std::vector<fs::path>& ps) {
    std::vector<std::string> s;
    for (const auto& p : ps) s.push_back(p.generic_string());
    return join(s);
  };
  auto triple = [](const std::array<double, 3>& a) {
    return str(a[0]) + "," + str(a[1]) + "," + str(a[2]);
  };
  v["run.seed"] = str(c.seed);
  v["run.output_dir"] = c.output_dir.generic_string();
  v["data.source_manifests"] = paths(c.source_manifests);
  v["data.target_manifests"] = paths(c.target_manifests);
  v["data.target_protocols"] = join(c.target_protocols);
  v["synthetic.source_domains"] = str(c.synthetic.source_domains);
  v["synthetic.ids_per_domain"] = str(c.synthetic.ids_per_domain);
  v["synthetic.images_per_id"] = str(c.synthetic.images_per_id);
  v["synthetic.target_domains"] = str(c.synthetic.target_domains);
  v["synthetic.target_ids"] = str(c.synthetic.target_ids);
  v["synthetic.target_images_per_id"] = str(c.synthetic.target_images_per_id);
  v["synthetic.height"] = str(c.synthetic.height);
  v["synthetic.width"] = str(c.synthetic.width);
  const auto& gb = c.model.global_backbone;
  v["model.backbone"] = to_string(gb.kind);
  v["model.feature_dim"] = str(gb.feature_dim);
  v["model.embedding_dim"] = str(c.model.embedding_dim);
  v["model.input_height"] = str(gb.input_height);
  v["model.input_width"] = str(gb.input_width);
  v["model.instance_norm"] = str(gb.instance_norm);
  v["pretrain.epochs"] = str(c.pretrain.epochs);
  v["pretrain.lr_drop_epoch"] = str(c.pretrain.lr_drop_epoch);
  v["pretrain.learning_rate"] = str(c.pretrain.learning_rate);
  v["pretrain.dropped_learning_rate"] = str(c.pretrain.dropped_learning_rate);
  const TrainConfig& t = c.train;
  v["train.epochs"] = str(t.epochs);
  v["train.lr_drop_epoch"] = str(t.lr_drop_epoch);
  v["train.learning_rate"] = str(t.learning_rate);
  v["train.dropped_learning_rate"] = str(t.dropped_learning_rate);
  v["train.momentum"] = str(t.momentum);
  v["train.weight_decay"] = str(t.weight_decay);
  v["train.bn_momentum"] = str(t.bn_momentum);
  v["train.lambda_tri"] = str(t.weights.triplet);
  v["train.lambda_consis"] = str(t.weights.consistency);
  v["train.margin"] = str(t.weights.margin);
  v["train.smoothing"] = str(t.weights.smoothing);
  v["train.smoothing_variant"] =
      t.smoothing_variant == SmoothingVariant::kOffClass ? "off_class" : "uniform";
  v["train.identities_per_batch"] = str(t.identities_per_batch);
  v["train.images_per_identity"] = str(t.images_per_identity);
  v["train.augment"] = str(t.augment);
  v["train.flip_probability"] = str(t.augmentation.flip_probability);
  v["train.padding"] = str(t.augmentation.padding);
  v["train.norm_mean"] = triple(t.normalization.mean);
  v["train.norm_std"] = triple(t.normalization.stddev);
  v["eval.num_splits"] = str(c.num_splits);
  v["eval.max_rank"] = str(c.max_rank);
  v["eval.cross_camera"] = str(c.cross_camera);
  v["ablation.disable_tri"] = str(c.disable_tri);
  v["ablation.disable_consis"] = str(c.disable_consis);
  v["ablation.baseline_only"] = str(c.baseline_only);
  return v;
}

TrainConfig ExperimentConfig::effective_train() const {
  TrainConfig t = train;
  if (disable_tri || baseline_only) t.weights.triplet = 0.0;
  if (disable_consis || baseline_only) t.weights.consistency = 0.0;
  return t;
}

TrainVariant ExperimentConfig::variant() const {
  return baseline_only ? TrainVariant::kBaseline : TrainVariant::kEpisodic;
}

void ExperimentConfig::validate() const {
  if (source_manifests.empty() != target_manifests.empty()) {
    throw ConfigError("data.source_manifests and data.target_manifests must both be set or "
                      "both be empty");
  }
  if (!source_manifests.empty() && source_manifests.size() < 3 && !baseline_only) {
    throw ConfigError("episodic training needs at least 3 source manifests");
  }
  if (source_manifests.empty()) {
    synthetic.validate();
    if (synthetic.source_domains < 3 && !baseline_only) {
      throw ConfigError("episodic training needs at least 3 synthetic source domains");
    }
  }
  const std::size_t targets =
      target_manifests.empty() ? synthetic.target_domains : target_manifests.size();
  if (targets == 0) throw ConfigError("at least one target domain is required");
  if (target_protocols.size() != 1 && target_protocols.size() != targets) {
    throw ConfigError("data.target_protocols needs one entry or one per target");
  }
  for (const auto& p : target_protocols) SplitProtocol::by_name(p);
  const auto& gb = model.global_backbone;
  if (gb.kind == BackboneKind::kResNet50 && gb.feature_dim != 32 * gb.resnet_base_width) {
    throw ConfigError("model.feature_dim must be " + std::to_string(32 * gb.resnet_base_width) +
                      " for resnet50");
  }
  if (gb.feature_dim == 0 || model.embedding_dim == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (gb.input_height < 16 || gb.input_width < 16) {
    throw ConfigError("model input must be at least 16x16");
  }
  if (num_splits == 0) throw ConfigError("eval.num_splits must be positive");
  if (disable_tri && disable_consis) {
    throw ConfigError("disable_tri and disable_consis together: use baseline_only for a "
                      "cross-entropy-only model");
  }
  train.validate();
  pretrain.validate();
  for (double s : train.normalization.stddev) {
    if (!(s > 0.0)) throw ConfigError("train.norm_std entries must be positive");
  }
}

ExperimentConfig load_config(const fs::path* file) {
  return config_from_values(read_config_values(file));
}

std::string config_text(const ExperimentConfig& config) {
  const ConfigValues v = config_to_values(config);
  std::ostringstream os;
  std::string section;
  for (const auto& e : kSchema) {
    if (e.section != section) {
      if (!section.empty()) os << '\n';
      section = e.section;
      os << '[' << section << "]\n";
    }
    os << "; " << e.description << '\n' << e.key << " = " << v.at(e.section + "." + e.key)
       << '\n';
  }
  return os.str();
}

void write_config(const fs::path& path, const ExperimentConfig& config) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << config_text(config);
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.output_dir.clear();
  return sha256_hex(config_text(c));
}

}  // namespace dgreid
