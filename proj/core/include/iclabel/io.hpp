#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "iclabel/crowdlabel.hpp"
#include "iclabel/features.hpp"
#include "iclabel/labels.hpp"
#include "iclabel/metrics.hpp"
#include "iclabel/network.hpp"

namespace iclabel::io {

// Recording bundle: a JSON manifest naming four "ICLB" arrays relative to the
// manifest's directory.
//
//   {"format": "iclabel-recording", "version": 1, "id": "...", "sample_rate": 256,
//    "channel_data": "data.bin", "electrode_positions": "electrodes.bin",
//    "mixing_matrix": "mixing.bin", "component_activity": "activity.bin",
//    "component_ids": ["ic000", ...]}
//
// component_ids is optional and defaults to "ic000", "ic001", ...
struct RecordingBundle {
  std::string id;
  Recording recording;
  std::vector<std::string> component_ids;
};

inline constexpr std::string_view kManifestName = "manifest.json";

// Accepts the manifest path or a directory holding manifest.json.
RecordingBundle read_recording_bundle(const std::filesystem::path& path);
// Writes manifest.json plus the four arrays into `dir` (created if needed).
void write_recording_bundle(const std::filesystem::path& dir, const RecordingBundle& bundle);

struct FeatureProvenance {
  std::string recording_id;
  double sample_rate = 0.0;
  std::size_t n_channels = 0;

  friend bool operator==(const FeatureProvenance&, const FeatureProvenance&) = default;
};

struct FeatureBundle {
  FeatureProvenance provenance;
  std::vector<std::string> component_ids;
  std::vector<IcFeatures> features;  // parallel to component_ids

  // Throws Errc::format on duplicate ids or mismatched lengths.
  void validate() const;
};

std::string serialize_features(const FeatureBundle& bundle);
FeatureBundle deserialize_features(std::string_view bytes, const std::string& context);
void write_features(const std::filesystem::path& path, const FeatureBundle& bundle);
FeatureBundle read_features(const std::filesystem::path& path);

// component_id plus one probability column per category.
struct LabelTable {
  std::vector<std::string> columns;  // category keys, header order
  std::vector<std::string> component_ids;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return component_ids.size(); }
};

LabelTable make_label_table(std::vector<std::string> ids, const std::vector<LabelVector>& labels);
LabelTable parse_label_csv(std::istream& in, const std::string& context);
void write_label_csv(std::ostream& out, const LabelTable& table);
LabelTable read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelTable& table);
// Rows of a 7-column table as LabelVectors; Errc::format when a row is invalid.
std::vector<LabelVector> label_vectors(const LabelTable& table, const std::string& context);

// Pairs the rows of a feature bundle with a 7-column label table by component id.
// Errc::id_mismatch lists ids present on only one side.
std::vector<LabeledFeatures> join_labels(const FeatureBundle& features, const LabelTable& labels);

// Vote log CSV; the 8 response columns are 0/1 selections.
inline constexpr std::string_view kVoteHeader =
    "labeler_id,component_id,brain,muscle,eye,heart,line_noise,channel_noise,other,"
    "question_mark,is_expert";

std::vector<crowd::Submission> parse_vote_csv(std::istream& in, const std::string& context);
std::vector<crowd::Submission> read_votes(const std::filesystem::path& path);
void write_vote_csv(std::ostream& out, const std::vector<crowd::Submission>& submissions);

// {"provenance": "...", "categories": [...], "thresholds": [...]}
metrics::ThresholdSet read_thresholds(const std::filesystem::path& path);
void write_thresholds(const std::filesystem::path& path, const metrics::ThresholdSet& set);

// Plain "key = value" lines; '#' starts a comment. Unknown keys and malformed
// values throw Errc::configuration with the line number.
std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& context);
nn::TrainConfig parse_train_config(std::istream& in, const std::string& context);
nn::TrainConfig read_train_config(const std::filesystem::path& path);

// Shortest decimal text that round-trips.
std::string format_double(double v);

}  // namespace iclabel::io
