#include "iclabel/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "iclabel/binary_format.hpp"
#include "iclabel/error.hpp"

namespace iclabel::io {
namespace {

using nlohmann::json;

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return path / kManifestName;
  return path;
}

json parse_json(std::string_view text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::format, context + ": " + e.what());
  }
}

template <typename T>
T json_field(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw Error(Errc::format, context + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::format, context + ": field \"" + key + "\" has the wrong type");
  }
}

Eigen::MatrixXd read_array(const std::filesystem::path& path) {
  return decode_array(read_file(path), path.string());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw Error(Errc::format, where + ": \"" + text + "\" is not a finite number");
  }
  return v;
}

void check_id(const std::string& id, const std::string& where) {
  if (id.empty()) throw Error(Errc::format, where + ": empty component id");
  if (id.find_first_of(",\"\n\r") != std::string::npos) {
    throw Error(Errc::format, where + ": id \"" + id + "\" contains a comma, quote or newline");
  }
}

std::string at_line(const std::string& context, std::size_t line) {
  return context + ":" + std::to_string(line);
}

bool parse_flag(const std::string& text, const std::string& where) {
  const auto t = trim(text);
  if (t == "1" || t == "true") return true;
  if (t == "0" || t == "false" || t.empty()) return false;
  throw Error(Errc::format, where + ": expected 0 or 1, got \"" + t + "\"");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

RecordingBundle read_recording_bundle(const std::filesystem::path& path) {
  const auto manifest = manifest_path(path);
  const auto context = manifest.string();
  const json j = parse_json(read_file(manifest), context);
  if (json_field<std::string>(j, "format", context) != "iclabel-recording") {
    throw Error(Errc::format, context + ": not an iclabel recording manifest");
  }
  const auto version = json_field<std::uint32_t>(j, "version", context);
  if (version != kFormatVersion) {
    throw Error(Errc::format, context + ": unsupported manifest version " + std::to_string(version));
  }
  const auto dir = manifest.parent_path();
  RecordingBundle b;
  b.id = json_field<std::string>(j, "id", context);
  b.recording.sample_rate = json_field<double>(j, "sample_rate", context);
  b.recording.channel_data = read_array(dir / json_field<std::string>(j, "channel_data", context));
  b.recording.mixing_matrix = read_array(dir / json_field<std::string>(j, "mixing_matrix", context));
  b.recording.component_activity =
      read_array(dir / json_field<std::string>(j, "component_activity", context));
  const auto positions_file = dir / json_field<std::string>(j, "electrode_positions", context);
  const Eigen::MatrixXd positions = read_array(positions_file);
  if (positions.cols() != 3) {
    throw Error(Errc::format, positions_file.string() + ": electrode positions must be n x 3");
  }
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    b.recording.electrode_positions.emplace_back(positions.row(i).transpose());
  }
  if (j.contains("component_ids")) {
    b.component_ids = json_field<std::vector<std::string>>(j, "component_ids", context);
  } else {
    for (std::size_t c = 0; c < static_cast<std::size_t>(b.recording.mixing_matrix.cols()); ++c) {
      char name[16];
      std::snprintf(name, sizeof name, "ic%03zu", c);
      b.component_ids.emplace_back(name);
    }
  }
  b.recording.validate();
  if (b.component_ids.size() != b.recording.n_components()) {
    throw Error(Errc::format, context + ": " + std::to_string(b.component_ids.size()) +
                                  " component ids for " +
                                  std::to_string(b.recording.n_components()) + " components");
  }
  std::set<std::string> unique;
  for (const auto& id : b.component_ids) {
    check_id(id, context);
    if (!unique.insert(id).second) throw Error(Errc::format, context + ": duplicate id " + id);
  }
  return b;
}

void write_recording_bundle(const std::filesystem::path& dir, const RecordingBundle& bundle) {
  std::filesystem::create_directories(dir);
  Eigen::MatrixXd positions(static_cast<Eigen::Index>(bundle.recording.electrode_positions.size()),
                            3);
  for (std::size_t i = 0; i < bundle.recording.electrode_positions.size(); ++i) {
    positions.row(static_cast<Eigen::Index>(i)) = bundle.recording.electrode_positions[i].transpose();
  }
  write_file_atomic(dir / "channel_data.bin", encode_array(bundle.recording.channel_data));
  write_file_atomic(dir / "electrodes.bin", encode_array(positions));
  write_file_atomic(dir / "mixing.bin", encode_array(bundle.recording.mixing_matrix));
  write_file_atomic(dir / "activity.bin", encode_array(bundle.recording.component_activity));
  json j;
  j["format"] = "iclabel-recording";
  j["version"] = kFormatVersion;
  j["id"] = bundle.id;
  j["sample_rate"] = bundle.recording.sample_rate;
  j["channel_data"] = "channel_data.bin";
  j["electrode_positions"] = "electrodes.bin";
  j["mixing_matrix"] = "mixing.bin";
  j["component_activity"] = "activity.bin";
  if (!bundle.component_ids.empty()) j["component_ids"] = bundle.component_ids;
  write_file_atomic(dir / kManifestName, j.dump(2) + "\n");
}

void FeatureBundle::validate() const {
  if (component_ids.size() != features.size()) {
    throw Error(Errc::format, "feature bundle has " + std::to_string(component_ids.size()) +
                                  " ids for " + std::to_string(features.size()) + " entries");
  }
  std::set<std::string> unique;
  for (const auto& id : component_ids) {
    check_id(id, "feature bundle");
    if (!unique.insert(id).second) throw Error(Errc::format, "duplicate component id " + id);
  }
}

std::string serialize_features(const FeatureBundle& bundle) {
  bundle.validate();
  json prov;
  prov["recording_id"] = bundle.provenance.recording_id;
  prov["sample_rate"] = bundle.provenance.sample_rate;
  prov["n_channels"] = bundle.provenance.n_channels;
  const std::string prov_text = prov.dump();

  ByteWriter w;
  w.magic(kFeatureMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(bundle.features.size()));
  w.u32(static_cast<std::uint32_t>(prov_text.size()));
  w.bytes(prov_text);
  for (std::size_t c = 0; c < bundle.features.size(); ++c) {
    const auto& f = bundle.features[c];
    w.u32(static_cast<std::uint32_t>(bundle.component_ids[c].size()));
    w.bytes(bundle.component_ids[c]);
    for (double v : f.topo.pixels) w.f32(static_cast<float>(v));
    for (auto m : f.topo.mask) w.u8(m);
    for (double v : f.psd) w.f32(static_cast<float>(v));
    for (double v : f.autocorr) w.f32(static_cast<float>(v));
  }
  return w.take();
}

FeatureBundle deserialize_features(std::string_view bytes, const std::string& context) {
  ByteReader r(bytes, context);
  r.expect_magic(kFeatureMagic);
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw Error(Errc::format, context + ": unsupported feature version " + std::to_string(version));
  }
  const auto count = r.u32();
  const auto prov_len = r.u32();
  const json prov = parse_json(r.bytes(prov_len), context + " provenance");
  FeatureBundle b;
  b.provenance.recording_id = json_field<std::string>(prov, "recording_id", context);
  b.provenance.sample_rate = json_field<double>(prov, "sample_rate", context);
  b.provenance.n_channels = json_field<std::size_t>(prov, "n_channels", context);

  constexpr std::size_t entry_floor = 4 + kTopoPixels * 5 + (kPsdBins + kAutocorrLags) * 4;
  if (static_cast<std::uint64_t>(count) * entry_floor > r.remaining()) {
    throw Error(Errc::format, context + ": declares " + std::to_string(count) +
                                  " components but is too short");
  }
  b.component_ids.reserve(count);
  b.features.reserve(count);
  auto finite = [&](float v, const std::string& id) {
    if (!std::isfinite(v)) throw Error(Errc::format, context + ": non-finite feature in " + id);
    return static_cast<double>(v);
  };
  for (std::uint32_t c = 0; c < count; ++c) {
    const auto id_len = r.u32();
    std::string id(r.bytes(id_len));
    IcFeatures f;
    for (double& v : f.topo.pixels) v = finite(r.f32(), id);
    for (auto& m : f.topo.mask) {
      m = r.u8();
      if (m > 1) throw Error(Errc::format, context + ": mask byte other than 0/1 in " + id);
    }
    for (double& v : f.psd) v = finite(r.f32(), id);
    for (double& v : f.autocorr) v = finite(r.f32(), id);
    b.component_ids.push_back(std::move(id));
    b.features.push_back(f);
  }
  r.expect_end();
  b.validate();
  return b;
}

void write_features(const std::filesystem::path& path, const FeatureBundle& bundle) {
  write_file_atomic(path, serialize_features(bundle));
}

FeatureBundle read_features(const std::filesystem::path& path) {
  return deserialize_features(read_file(path), path.string());
}

LabelTable make_label_table(std::vector<std::string> ids, const std::vector<LabelVector>& labels) {
  if (ids.size() != labels.size()) {
    throw Error(Errc::shape_mismatch, "label table needs one id per label");
  }
  LabelTable t;
  t.columns.assign(kCategoryKeys.begin(), kCategoryKeys.end());
  t.component_ids = std::move(ids);
  for (const auto& l : labels) t.rows.emplace_back(l.p.begin(), l.p.end());
  return t;
}

LabelTable parse_label_csv(std::istream& in, const std::string& context) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw Error(Errc::format, context + ": empty label file");
  const auto header = split_csv(line);
  if (header.size() < 3 || trim(header[0]) != "component_id") {
    throw Error(Errc::format, at_line(context, line_no) +
                                  ": header must be component_id followed by category columns");
  }
  LabelTable t;
  for (std::size_t i = 1; i < header.size(); ++i) t.columns.push_back(trim(header[i]));
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    const auto where = at_line(context, line_no);
    if (cells.size() != header.size()) {
      throw Error(Errc::format, where + ": expected " + std::to_string(header.size()) +
                                    " columns, got " + std::to_string(cells.size()));
    }
    auto id = trim(cells[0]);
    check_id(id, where);
    if (!seen.insert(id).second) throw Error(Errc::format, where + ": duplicate id " + id);
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_number(trim(cells[i]), where));
    t.component_ids.push_back(std::move(id));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_label_csv(std::ostream& out, const LabelTable& table) {
  out << "component_id";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    check_id(table.component_ids[r], "label table");
    out << table.component_ids[r];
    for (double v : table.rows[r]) out << ',' << format_double(v);
    out << '\n';
  }
}

LabelTable read_labels(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_label_csv(in, path.string());
}

void write_labels(const std::filesystem::path& path, const LabelTable& table) {
  std::ostringstream out;
  write_label_csv(out, table);
  write_file_atomic(path, out.str());
}

std::vector<LabelVector> label_vectors(const LabelTable& table, const std::string& context) {
  if (table.columns.size() != kNumCategories ||
      !std::equal(table.columns.begin(), table.columns.end(), kCategoryKeys.begin())) {
    throw Error(Errc::format, context + ": expected the 7 category columns in canonical order");
  }
  std::vector<LabelVector> out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    LabelVector v;
    std::copy(table.rows[r].begin(), table.rows[r].end(), v.p.begin());
    if (!v.is_valid()) {
      throw Error(Errc::format, context + ": label for " + table.component_ids[r] +
                                    " is not a probability vector");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<LabeledFeatures> join_labels(const FeatureBundle& features, const LabelTable& labels) {
  const auto vectors = label_vectors(labels, "labels");
  std::map<std::string, std::size_t> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index.emplace(labels.component_ids[i], i);
  std::set<std::string> feature_ids(features.component_ids.begin(), features.component_ids.end());
  std::vector<std::string> missing;
  for (const auto& id : features.component_ids) {
    if (!label_index.count(id)) missing.push_back("unlabeled " + id);
  }
  for (const auto& id : labels.component_ids) {
    if (!feature_ids.count(id)) missing.push_back("no features for " + id);
  }
  if (!missing.empty()) {
    std::string msg = "feature and label ids differ:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i] + ";";
    if (missing.size() > 20) msg += " ...";
    throw Error(Errc::id_mismatch, msg);
  }
  std::vector<LabeledFeatures> out;
  for (std::size_t i = 0; i < features.features.size(); ++i) {
    out.push_back({features.features[i], vectors[label_index.at(features.component_ids[i])]});
  }
  return out;
}

std::vector<crowd::Submission> parse_vote_csv(std::istream& in, const std::string& context) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw Error(Errc::format, context + ": empty vote file");
  if (trim(line) != kVoteHeader) {
    throw Error(Errc::format, at_line(context, 1) + ": header must be " + std::string(kVoteHeader));
  }
  std::vector<crowd::Submission> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = at_line(context, line_no);
    const auto cells = split_csv(line);
    if (cells.size() != 11) {
      throw Error(Errc::format, where + ": expected 11 columns, got " +
                                    std::to_string(cells.size()));
    }
    crowd::Submission s;
    s.labeler_id = trim(cells[0]);
    s.component_id = trim(cells[1]);
    if (s.labeler_id.empty()) throw Error(Errc::format, where + ": empty labeler id");
    check_id(s.component_id, where);
    for (std::size_t r = 0; r < crowd::kNumResponses; ++r) s.selected[r] = parse_flag(cells[2 + r], where);
    s.is_expert = parse_flag(cells[10], where);
    if (std::find(s.selected.begin(), s.selected.end(), true) == s.selected.end()) {
      throw Error(Errc::malformed_submission, where + ": submission selects no response");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<crowd::Submission> read_votes(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_vote_csv(in, path.string());
}

void write_vote_csv(std::ostream& out, const std::vector<crowd::Submission>& submissions) {
  out << kVoteHeader << '\n';
  for (const auto& s : submissions) {
    out << s.labeler_id << ',' << s.component_id;
    for (bool b : s.selected) out << ',' << (b ? 1 : 0);
    out << ',' << (s.is_expert ? 1 : 0) << '\n';
  }
}

metrics::ThresholdSet read_thresholds(const std::filesystem::path& path) {
  const auto context = path.string();
  const json j = parse_json(read_file(path), context);
  metrics::ThresholdSet set;
  set.thresholds = json_field<std::vector<double>>(j, "thresholds", context);
  if (j.contains("provenance")) set.provenance = json_field<std::string>(j, "provenance", context);
  for (double t : set.thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::format, context + ": thresholds must lie in [0, 1]");
  }
  return set;
}

void write_thresholds(const std::filesystem::path& path, const metrics::ThresholdSet& set) {
  json j;
  j["provenance"] = set.provenance;
  j["thresholds"] = set.thresholds;
  if (set.thresholds.size() == kNumCategories) {
    j["categories"] = std::vector<std::string>(kCategoryKeys.begin(), kCategoryKeys.end());
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& context) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::configuration, at_line(context, line_no) + ": expected key = value");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error(Errc::configuration, at_line(context, line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw Error(Errc::configuration, at_line(context, line_no) + ": duplicate key " + key);
    }
  }
  return out;
}

nn::TrainConfig parse_train_config(std::istream& in, const std::string& context) {
  const auto values = parse_key_values(in, context);
  nn::TrainConfig cfg;
  auto number = [&](const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
      throw Error(Errc::configuration, context + ": " + key + " = \"" + text + "\" is not a number");
    }
    return v;
  };
  auto count = [&](const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
      throw Error(Errc::configuration, context + ": " + key + " must be a non-negative integer");
    }
    return v;
  };
  for (const auto& [key, text] : values) {
    if (key == "learning_rate") cfg.learning_rate = number(key, text);
    else if (key == "adam_beta1") cfg.adam_beta1 = number(key, text);
    else if (key == "adam_beta2") cfg.adam_beta2 = number(key, text);
    else if (key == "adam_epsilon") cfg.adam_epsilon = number(key, text);
    else if (key == "gradient_clip") cfg.gradient_clip = number(key, text);
    else if (key == "batch_size") cfg.batch_size = count(key, text);
    else if (key == "early_stop_window") cfg.early_stop_window = count(key, text);
    else if (key == "validation_interval") cfg.validation_interval = count(key, text);
    else if (key == "max_batches") cfg.max_batches = count(key, text);
    else if (key == "input_noise_sigma") cfg.input_noise_sigma = number(key, text);
    else if (key == "seed") cfg.seed = count(key, text);
    else if (key == "class_weights") {
      std::vector<std::string> parts = split_csv(text);
      if (parts.size() != kNumCategories) {
        throw Error(Errc::configuration, context + ": class_weights needs 7 comma-separated values");
      }
      for (std::size_t i = 0; i < kNumCategories; ++i) {
        cfg.class_weights[i] = number(key, trim(parts[i]));
      }
    } else {
      throw Error(Errc::configuration, context + ": unknown key " + key);
    }
  }
  cfg.validate();
  return cfg;
}

nn::TrainConfig read_train_config(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_train_config(in, path.string());
}

}  // namespace iclabel::io
