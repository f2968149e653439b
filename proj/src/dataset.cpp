#include "raaf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "raaf/errors.hpp"

namespace raaf::data {

std::size_t DatasetConfig::window_len() const {
    auto len = static_cast<std::size_t>(std::lround(window_seconds * sample_rate_hz));
    return std::max<std::size_t>(len, 1);
}

std::size_t DatasetConfig::window_stride() const {
    auto stride = static_cast<std::size_t>(
        std::lround(window_seconds * sample_rate_hz * (1.0 - window_overlap)));
    return std::max<std::size_t>(stride, 1);
}

std::vector<std::string> DatasetConfig::row_labels() const {
    std::vector<std::string> labels;
    labels.reserve(channels.size());
    for (const auto& ch : channels) labels.push_back(ch.label);
    return labels;
}

void DatasetConfig::validate() const {
    if (channels.empty() || channels.size() % 2 == 0 || channels.size() < 3) {
        throw ConfigError("dataset '" + name + "': channel triple count must be odd and >= 3, got " +
                          std::to_string(channels.size()));
    }
    if (sample_rate_hz <= 0.0) throw ConfigError("dataset '" + name + "': sample rate must be positive");
    if (activity_column < 0) throw ConfigError("dataset '" + name + "': activity column missing");
    if (n_classes == 0) throw ConfigError("dataset '" + name + "': class count missing");
    if (window_overlap < 0.0 || window_overlap >= 1.0) {
        throw ConfigError("dataset '" + name + "': window overlap must be in [0, 1)");
    }
    std::set<std::string> labels;
    for (const auto& ch : channels) {
        if (ch.label.empty()) throw ConfigError("dataset '" + name + "': empty channel label");
        if (!labels.insert(ch.label).second) {
            throw ConfigError("dataset '" + name + "': duplicate channel label '" + ch.label + "'");
        }
    }
    for (const auto& [raw, cls] : label_map) {
        if (cls != kDiscardLabel && (cls < 0 || static_cast<std::size_t>(cls) >= n_classes)) {
            throw ConfigError("dataset '" + name + "': label map sends id " + std::to_string(raw) +
                              " to class " + std::to_string(cls) + " outside [0, " +
                              std::to_string(n_classes) + ")");
        }
    }
    if (subjects.empty()) throw ConfigError("dataset '" + name + "': no subject files");
}

namespace {

double parse_field(const std::vector<std::string_view>& fields, int column,
                   const std::string& path, std::size_t line_no) {
    if (column < 0) return 0.0;
    if (static_cast<std::size_t>(column) >= fields.size()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": column " +
                        std::to_string(column) + " beyond line width " +
                        std::to_string(fields.size()));
    }
    const std::string_view f = fields[static_cast<std::size_t>(column)];
    // strtod handles "NaN"/"inf" tokens, which std::from_chars on GCC also
    // accepts; route through a buffer to guarantee NUL termination.
    char buf[64];
    if (f.size() >= sizeof(buf)) {
        throw DataError(path + ":" + std::to_string(line_no) + ": oversized numeric token");
    }
    std::copy(f.begin(), f.end(), buf);
    buf[f.size()] = '\0';
    char* end = nullptr;
    const double v = std::strtod(buf, &end);
    if (end != buf + f.size()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric token '" +
                        std::string(f) + "'");
    }
    return v;
}

}  // namespace

Recording load_recording(const std::string& path, const DatasetConfig& config,
                         const std::string& subject_id) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open recording '" + path + "'");

    Recording rec;
    rec.subject_id = subject_id;
    auto labels = std::make_shared<const std::vector<std::string>>(config.row_labels());

    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> fields;
    while (std::getline(is, line)) {
        ++line_no;
        fields.clear();
        std::size_t pos = 0;
        while (pos < line.size()) {
            while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
            std::size_t start = pos;
            while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
            if (pos > start) fields.emplace_back(line.data() + start, pos - start);
        }
        if (fields.empty()) continue;
        ++rec.rows_in;

        TimedRow row;
        row.timestamp = (config.timestamp_column >= 0)
                            ? parse_field(fields, config.timestamp_column, path, line_no)
                            : static_cast<double>(rec.rows_in - 1) / config.sample_rate_hz;
        row.raw_label =
            static_cast<int>(std::lround(parse_field(fields, config.activity_column, path, line_no)));

        row.snapshot.row_labels = labels;
        row.snapshot.rows.reserve(config.channels.size());
        bool finite = true;
        for (const auto& ch : config.channels) {
            std::array<double, 3> triple{0.0, 0.0, 0.0};
            for (std::size_t a = 0; a < 3; ++a) {
                triple[a] = parse_field(fields, ch.columns[a], path, line_no);
                if (!std::isfinite(triple[a])) finite = false;
            }
            row.snapshot.rows.push_back(triple);
        }
        if (!finite) {
            ++rec.dropped_nonfinite;
            continue;
        }
        if (map_label(row.raw_label, config) == kDiscardLabel) ++rec.discarded_by_label;
        rec.rows.push_back(std::move(row));
    }
    return rec;
}

int map_label(int raw_id, const DatasetConfig& config) {
    auto it = config.label_map.find(raw_id);
    if (it == config.label_map.end()) {
        throw DataError("dataset '" + config.name + "': activity id " + std::to_string(raw_id) +
                        " has no entry in the label map");
    }
    return it->second;
}

std::vector<int> map_labels(const std::vector<int>& raw_ids, const DatasetConfig& config) {
    std::vector<int> out;
    out.reserve(raw_ids.size());
    for (int id : raw_ids) out.push_back(map_label(id, config));
    return out;
}

std::vector<LabeledWindow> make_windows(const Recording& recording, const DatasetConfig& config,
                                        std::size_t window_len, std::size_t stride) {
    if (window_len == 0 || stride == 0) {
        throw ConfigError("make_windows: window length and stride must be positive");
    }
    std::vector<LabeledWindow> windows;
    if (recording.rows.size() < window_len) return windows;

    // Pre-map labels once; discard markers break windows like label flips.
    std::vector<int> mapped(recording.rows.size());
    for (std::size_t i = 0; i < recording.rows.size(); ++i) {
        mapped[i] = map_label(recording.rows[i].raw_label, config);
    }

    for (std::size_t start = 0; start + window_len <= recording.rows.size(); start += stride) {
        const int label = mapped[start];
        if (label == kDiscardLabel) continue;
        bool uniform = true;
        for (std::size_t k = 1; k < window_len; ++k) {
            if (mapped[start + k] != label) {
                uniform = false;
                break;
            }
        }
        if (!uniform) continue;
        LabeledWindow w;
        w.label = static_cast<std::size_t>(label);
        w.subject_id = recording.subject_id;
        w.snapshots.reserve(window_len);
        for (std::size_t k = 0; k < window_len; ++k) {
            w.snapshots.push_back(recording.rows[start + k].snapshot);
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<LosoSplit> loso_splits(std::vector<std::string> subjects) {
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (subjects.size() < 2) {
        throw ConfigError("leave-one-subject-out requires at least 2 subjects, got " +
                          std::to_string(subjects.size()));
    }
    std::vector<LosoSplit> splits;
    splits.reserve(subjects.size());
    for (const std::string& held : subjects) {
        LosoSplit split;
        split.held_out = held;
        for (const std::string& s : subjects) {
            if (s != held) split.train_subjects.push_back(s);
        }
        splits.push_back(std::move(split));
    }
    return splits;
}

std::vector<frames::Sample> subsample_labeled(const std::vector<frames::Sample>& pool,
                                              std::size_t n, std::uint64_t seed,
                                              std::size_t n_classes) {
    if (n > pool.size()) {
        throw ConfigError("subsample: requested " + std::to_string(n) + " of " +
                          std::to_string(pool.size()) + " samples");
    }
    if (n == pool.size()) return pool;

    // Per-class index lists, each shuffled once with a class-specific
    // stream. A fixed global pick order interleaves classes in proportion
    // to their pool share, so subsets of increasing n are nested.
    std::vector<std::vector<std::size_t>> per_class(n_classes);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].label >= n_classes) {
            throw DataError("subsample: sample label " + std::to_string(pool[i].label) +
                            " outside class range");
        }
        per_class[pool[i].label].push_back(i);
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        Rng rng(seed ^ (0x51ed2701u + 0x9e3779b9u * static_cast<std::uint64_t>(c + 1)));
        rng.shuffle(per_class[c]);
    }

    const double total = static_cast<double>(pool.size());
    std::vector<std::size_t> taken(n_classes, 0);
    std::vector<std::size_t> chosen;
    chosen.reserve(n);
    for (std::size_t m = 0; m < n; ++m) {
        // Greedy largest-deficit pick against the proportional quota.
        double best_deficit = -1.0;
        std::size_t best_class = n_classes;
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (taken[c] >= per_class[c].size()) continue;
            const double share = static_cast<double>(per_class[c].size()) / total;
            const double deficit = share * static_cast<double>(m + 1) -
                                   static_cast<double>(taken[c]);
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best_class = c;
            }
        }
        if (best_class == n_classes) break;  // all classes exhausted
        chosen.push_back(per_class[best_class][taken[best_class]]);
        ++taken[best_class];
    }

    std::sort(chosen.begin(), chosen.end());
    std::vector<frames::Sample> out;
    out.reserve(chosen.size());
    for (std::size_t idx : chosen) out.push_back(pool[idx]);
    return out;
}

std::string dataset_config_to_json(const DatasetConfig& config) {
    nlohmann::json j;
    j["name"] = config.name;
    j["sample_rate_hz"] = config.sample_rate_hz;
    j["activity_column"] = config.activity_column;
    j["timestamp_column"] = config.timestamp_column;
    j["window_seconds"] = config.window_seconds;
    j["window_overlap"] = config.window_overlap;
    j["n_classes"] = config.n_classes;
    nlohmann::json channels = nlohmann::json::array();
    for (const auto& ch : config.channels) {
        channels.push_back({{"label", ch.label},
                            {"group", ch.group},
                            {"columns", {ch.columns[0], ch.columns[1], ch.columns[2]}}});
    }
    j["channels"] = std::move(channels);
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [raw, cls] : config.label_map) {
        if (cls == kDiscardLabel) {
            labels[std::to_string(raw)] = "discard";
        } else {
            labels[std::to_string(raw)] = cls;
        }
    }
    j["label_map"] = std::move(labels);
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : config.subjects) {
        subjects.push_back({{"id", s.id}, {"file", s.path}});
    }
    j["subjects"] = std::move(subjects);
    return j.dump(2);
}

DatasetConfig dataset_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset config: bad JSON: ") + e.what());
    }
    DatasetConfig cfg;
    try {
        cfg.name = j.at("name").get<std::string>();
        cfg.sample_rate_hz = j.at("sample_rate_hz").get<double>();
        cfg.activity_column = j.at("activity_column").get<int>();
        cfg.timestamp_column = j.value("timestamp_column", -1);
        cfg.window_seconds = j.value("window_seconds", 2.0);
        cfg.window_overlap = j.value("window_overlap", 0.5);
        cfg.n_classes = j.at("n_classes").get<std::size_t>();
        for (const auto& ch : j.at("channels")) {
            ChannelTriple triple;
            triple.label = ch.at("label").get<std::string>();
            triple.group = ch.value("group", triple.label);
            const auto& cols = ch.at("columns");
            for (std::size_t a = 0; a < 3; ++a) triple.columns[a] = cols.at(a).get<int>();
            cfg.channels.push_back(std::move(triple));
        }
        for (const auto& [key, value] : j.at("label_map").items()) {
            const int raw = std::stoi(key);
            if (value.is_string()) {
                if (value.get<std::string>() != "discard") {
                    throw ConfigError("dataset config: label map value must be a class index or \"discard\"");
                }
                cfg.label_map[raw] = kDiscardLabel;
            } else {
                cfg.label_map[raw] = value.get<int>();
            }
        }
        for (const auto& s : j.at("subjects")) {
            cfg.subjects.push_back(SubjectFile{s.at("id").get<std::string>(),
                                               s.at("file").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

std::string join_path(const std::string& dir, const std::string& file) {
    if (dir.empty() || file.empty() || file.front() == '/') return file;
    if (dir.back() == '/') return dir + file;
    return dir + "/" + file;
}

}  // namespace

std::vector<SubjectData> build_samples(const DatasetConfig& config, const std::string& data_dir,
                                       std::size_t frames_per_sample, frames::FrameMode mode,
                                       IngestStats* stats) {
    config.validate();
    if (frames_per_sample == 0) throw ConfigError("build_samples: need at least one frame");
    const std::size_t window_len = config.window_len();
    const std::size_t stride = config.window_stride();
    if (window_len < frames_per_sample) {
        throw ConfigError("build_samples: window of " + std::to_string(window_len) +
                          " rows cannot yield " + std::to_string(frames_per_sample) + " frames");
    }

    IngestStats acc;
    std::vector<SubjectData> out;
    out.reserve(config.subjects.size());
    for (const SubjectFile& subj : config.subjects) {
        Recording rec = load_recording(join_path(data_dir, subj.path), config, subj.id);
        acc.rows_in += rec.rows_in;
        acc.rows_used += rec.rows.size();
        acc.dropped_nonfinite += rec.dropped_nonfinite;
        acc.discarded_by_label += rec.discarded_by_label;

        SubjectData sd;
        sd.subject = subj.id;
        for (LabeledWindow& window : make_windows(rec, config, window_len, stride)) {
            sd.samples.push_back(frames::window_to_sample(window.snapshots, frames_per_sample,
                                                          window.label, window.subject_id, mode));
            ++acc.windows;
        }
        acc.samples += sd.samples.size();
        out.push_back(std::move(sd));
    }
    if (stats) *stats = acc;
    return out;
}

void write_cache(const std::string& dir, const std::vector<SubjectData>& data,
                 std::size_t n_rows) {
    std::ofstream manifest(dir + "/manifest.csv", std::ios::trunc);
    if (!manifest) throw DataError("cache: cannot write manifest in '" + dir + "'");
    manifest << "file,subject,label,frames\n";
    std::size_t index = 0;
    for (const SubjectData& subj : data) {
        for (const frames::Sample& sample : subj.samples) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample%06zu.txt", index++);
            std::ofstream os(dir + "/" + name, std::ios::trunc);
            if (!os) throw DataError("cache: cannot write '" + std::string(name) + "'");
            frames::dump_sample(os, sample, n_rows);
            manifest << name << ',' << subj.subject << ',' << sample.label << ','
                     << sample.frames.size() << '\n';
        }
    }
}

std::vector<SubjectData> load_cache(const std::string& dir, std::size_t* n_rows_out) {
    std::ifstream manifest(dir + "/manifest.csv");
    if (!manifest) throw DataError("cache: cannot open manifest in '" + dir + "'");
    std::string line;
    if (!std::getline(manifest, line) || line.rfind("file,subject,label,frames", 0) != 0) {
        throw DataError("cache: bad manifest header");
    }

    std::vector<SubjectData> out;
    std::size_t n_rows = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string file, subject, label_str, frames_str;
        if (!std::getline(ss, file, ',') || !std::getline(ss, subject, ',') ||
            !std::getline(ss, label_str, ',') || !std::getline(ss, frames_str)) {
            throw DataError("cache: bad manifest line '" + line + "'");
        }
        std::ifstream is(dir + "/" + file);
        if (!is) throw DataError("cache: missing frame dump '" + file + "'");
        std::size_t rows_here = 0;
        frames::Sample sample = frames::parse_sample_dump(is, &rows_here);
        if (n_rows == 0) n_rows = rows_here;
        if (rows_here != n_rows) throw DataError("cache: inconsistent row counts across dumps");
        sample.label = static_cast<std::size_t>(std::stoul(label_str));
        sample.subject_id = subject;
        if (sample.frames.size() != static_cast<std::size_t>(std::stoul(frames_str))) {
            throw DataError("cache: manifest frame count mismatch for '" + file + "'");
        }
        if (out.empty() || out.back().subject != subject) {
            SubjectData sd;
            sd.subject = subject;
            out.push_back(std::move(sd));
        }
        out.back().samples.push_back(std::move(sample));
    }
    if (out.empty()) throw DataError("cache: manifest lists no samples");
    if (n_rows_out) *n_rows_out = n_rows;
    return out;
}

}  // namespace raaf::data
