// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "msas/common.hpp"
#include "msas/rng.hpp"

namespace msas {

/// Per-prompt metadata: score range and token budget n_p.
struct PromptSpec {
    int prompt_id = 0;
    double score_min = 0.0;
    double score_max = 1.0;
    int n_p = 1;
    bool discrete = true;

    void validate() const {
        if (!(score_min < score_max)) throw ValueError("prompt spec: score_min must be < score_max");
        if (n_p < 1) throw ValueError("prompt spec: n_p must be >= 1");
    }
};

struct Essay {
    std::string essay_id;
    int prompt_id = 0;
    std::string text;
    double raw_score = 0.0;
};

/// One fold of the 5-fold 60/20/20 protocol. Ids are essay_ids.
struct FoldSplit {
    int fold_index = 0;
    std::vector<std::string> train_ids, dev_ids, test_ids;
};

/// Essay text plus its label mapped to [0,1]; the unit the trainer consumes.
struct ScoredText {
    std::string essay_id;
    int prompt_id = 0;
    std::string text;
    double label01 = 0.0;
};

inline double normalize_score(double s, const PromptSpec& spec) {
    spec.validate();
    if (s < spec.score_min || s > spec.score_max)
        throw ValueError("normalize_score: score " + std::to_string(s) + " outside prompt range");
    return (s - spec.score_min) / (spec.score_max - spec.score_min);
}

enum class RoundMode { Nearest, None };

/// Clip to [0,1], map back to the prompt range, and (for discrete prompts
/// under Nearest) round half away from zero.
inline double denormalize_score(double y, const PromptSpec& spec, RoundMode mode = RoundMode::Nearest) {
    spec.validate();
    const double clipped = std::min(1.0, std::max(0.0, y));
    const double raw = clipped * (spec.score_max - spec.score_min) + spec.score_min;
    if (spec.discrete && mode == RoundMode::Nearest) return std::round(raw);
    return raw;
}

namespace detail {

inline std::vector<std::string> split_tab(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

inline bool parse_int(const std::string& s, int& out) {
    double d = 0.0;
    if (!parse_double(s, d)) return false;
    if (d != std::floor(d)) return false;
    out = static_cast<int>(d);
    return true;
}

/// RFC-4180 style CSV: quoted fields may contain commas, quotes ("" escape)
/// and newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    std::size_t i = 0;
    const std::size_t n = content.size();
    auto end_field = [&]() {
        row.push_back(field);
        field.clear();
    };
    auto end_row = [&]() {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < n) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < n && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else {
            if (c == '"' && field.empty()) {
                in_quotes = true;
            } else if (c == ',') {
                end_field();
            } else if (c == '\n') {
                if (!field.empty() && field.back() == '\r') field.pop_back();
                end_row();
            } else {
                field.push_back(c);
            }
        }
        ++i;
    }
    if (!field.empty() || !row.empty()) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_row();
    }
    return rows;
}

}  // namespace detail

/// Load a prompt-spec file: JSON array of
/// {prompt_id, score_min, score_max, n_p[, discrete]}.
inline std::vector<PromptSpec> load_prompt_specs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prompt spec file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw IngestionError("prompt spec file " + path + ": " + e.what());
    }
    if (!j.is_array()) throw IngestionError("prompt spec file must hold a JSON array");
    std::vector<PromptSpec> specs;
    for (const auto& item : j) {
        PromptSpec s;
        s.prompt_id = item.at("prompt_id").get<int>();
        s.score_min = item.at("score_min").get<double>();
        s.score_max = item.at("score_max").get<double>();
        s.n_p = item.at("n_p").get<int>();
        s.discrete = item.value("discrete", true);
        s.validate();
        specs.push_back(s);
    }
    return specs;
}

inline const PromptSpec& find_spec(const std::vector<PromptSpec>& specs, int prompt_id) {
    for (const auto& s : specs)
        if (s.prompt_id == prompt_id) return s;
    throw ValueError("no prompt spec for prompt " + std::to_string(prompt_id));
}

/// Load an ASAP-style TSV (UTF-8, header row, columns essay_id, essay_set,
/// essay, domain1_score). Text is preserved verbatim; every row must belong
/// to one of the given prompts and carry an in-range score.
inline std::vector<Essay> load_asap_tsv(const std::string& path,
                                        const std::vector<PromptSpec>& specs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) return {};  // empty file -> empty corpus
    line = detail::strip_cr(line);
    const auto header = detail::split_tab(line);
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IngestionError("missing column '" + name + "' in " + path);
    };
    const int c_id = col("essay_id");
    const int c_set = col("essay_set");
    const int c_text = col("essay");
    const int c_score = col("domain1_score");

    std::vector<Essay> essays;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto fields = detail::split_tab(line);
        const int needed = std::max({c_id, c_set, c_text, c_score}) + 1;
        if (static_cast<int>(fields.size()) < needed)
            throw IngestionError("row " + std::to_string(row) + ": too few columns");
        Essay e;
        e.essay_id = fields[static_cast<std::size_t>(c_id)];
        if (!detail::parse_int(fields[static_cast<std::size_t>(c_set)], e.prompt_id))
            throw IngestionError("row " + std::to_string(row) + ": bad essay_set");
        e.text = fields[static_cast<std::size_t>(c_text)];
        if (!detail::parse_double(fields[static_cast<std::size_t>(c_score)], e.raw_score))
            throw IngestionError("row " + std::to_string(row) + ": non-numeric score");
        bool known = false;
        for (const auto& s : specs) {
            if (s.prompt_id == e.prompt_id) {
                known = true;
                if (e.raw_score < s.score_min || e.raw_score > s.score_max)
                    throw ValueError("row " + std::to_string(row) + ": score " +
                                     std::to_string(e.raw_score) + " outside range of prompt " +
                                     std::to_string(e.prompt_id));
                break;
            }
        }
        if (!known)
            throw IngestionError("row " + std::to_string(row) + ": unknown prompt id " +
                                 std::to_string(e.prompt_id));
        essays.push_back(std::move(e));
    }
    return essays;
}

/// Continuous readability prompt: scores in [-3.68, 1.72].
inline PromptSpec crp_prompt_spec(int n_p = 252) {
    PromptSpec s;
    s.prompt_id = 0;
    s.score_min = -3.68;
    s.score_max = 1.72;
    s.n_p = n_p;
    s.discrete = false;
    return s;
}

/// Load a CRP-style CSV (columns id, excerpt, target).
inline std::vector<Essay> load_crp_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto rows = detail::parse_csv(ss.str());
    if (rows.empty()) return {};
    const auto& header = rows[0];
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IngestionError("missing column '" + name + "' in " + path);
    };
    const int c_id = col("id");
    const int c_text = col("excerpt");
    const int c_target = col("target");
    const PromptSpec spec = crp_prompt_spec();

    std::vector<Essay> essays;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        const int needed = std::max({c_id, c_text, c_target}) + 1;
        if (static_cast<int>(fields.size()) < needed)
            throw IngestionError("row " + std::to_string(r + 1) + ": too few columns");
        Essay e;
        e.essay_id = fields[static_cast<std::size_t>(c_id)];
        e.prompt_id = spec.prompt_id;
        e.text = fields[static_cast<std::size_t>(c_text)];
        if (!detail::parse_double(fields[static_cast<std::size_t>(c_target)], e.raw_score))
            throw IngestionError("row " + std::to_string(r + 1) + ": non-numeric target");
        if (e.raw_score < spec.score_min || e.raw_score > spec.score_max)
            throw ValueError("row " + std::to_string(r + 1) + ": target outside [-3.68, 1.72]");
        essays.push_back(std::move(e));
    }
    return essays;
}

/// Deterministic 5-fold split. Essays are shuffled once with the seed, cut
/// into five near-equal slices at floor(i*N/5) boundaries; fold f tests on
/// slice f, validates on slice (f+1) mod 5 and trains on the rest. Every
/// essay lands in exactly one test fold and sizes stay within one essay of
/// the exact 60/20/20 quotas.
inline std::vector<FoldSplit> make_folds(const std::vector<Essay>& essays, std::uint64_t seed) {
    const std::size_t n = essays.size();
    if (n < 5) throw ValueError("make_folds: need at least 5 essays");
    {
        std::set<std::string> ids;
        for (const auto& e : essays) ids.insert(e.essay_id);
        if (ids.size() != n) throw ValueError("make_folds: duplicate essay ids");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    CounterRng rng(seed);
    deterministic_shuffle(order, rng);

    std::size_t bound[6];
    for (int i = 0; i <= 5; ++i) bound[i] = i * n / 5;

    std::vector<FoldSplit> folds;
    for (int f = 0; f < 5; ++f) {
        FoldSplit fs;
        fs.fold_index = f;
        const int dev_slice = (f + 1) % 5;
        for (int s = 0; s < 5; ++s) {
            auto& dst = (s == f) ? fs.test_ids : (s == dev_slice ? fs.dev_ids : fs.train_ids);
            for (std::size_t i = bound[s]; i < bound[s + 1]; ++i)
                dst.push_back(essays[order[i]].essay_id);
        }
        folds.push_back(std::move(fs));
    }
    return folds;
}

/// Every essay from prompts other than the target, labels min-max scaled to
/// [0,1] with the owning prompt's range.
inline std::vector<ScoredText> out_of_domain_pool(const std::vector<Essay>& all_essays,
                                                  int target_prompt,
                                                  const std::vector<PromptSpec>& specs) {
    std::set<int> prompts;
    for (const auto& e : all_essays) prompts.insert(e.prompt_id);
    if (prompts.size() < 2)
        throw ValueError("out_of_domain_pool: corpus has a single prompt, pool would be empty");
    std::vector<ScoredText> pool;
    for (const auto& e : all_essays) {
        if (e.prompt_id == target_prompt) continue;
        const PromptSpec& s = find_spec(specs, e.prompt_id);
        pool.push_back({e.essay_id, e.prompt_id, e.text, normalize_score(e.raw_score, s)});
    }
    if (pool.empty()) throw ValueError("out_of_domain_pool: no essays outside target prompt");
    return pool;
}

/// n_p convention for corpora without a published budget: the smallest
/// integer >= the 90th percentile of WordPiece lengths.
inline int np_from_lengths(std::vector<int> lengths) {
    if (lengths.empty()) throw ValueError("np_from_lengths: empty corpus");
    std::sort(lengths.begin(), lengths.end());
    const std::size_t n = lengths.size();
    std::size_t idx = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n)));
    if (idx > 0) --idx;
    return std::max(1, lengths[idx]);
}

}  // namespace msas
