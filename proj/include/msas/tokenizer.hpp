// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "msas/common.hpp"

namespace msas {

/// WordPiece vocabulary: one token per line, line number = id. Subword
/// continuations carry the "##" prefix. The four special tokens must be
/// present with distinct ids.
class Vocabulary {
 public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";

    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        Vocabulary v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            if (v.index_.count(v.tokens_[i]))
                throw ValueError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
            v.index_[v.tokens_[i]] = static_cast<int>(i);
        }
        v.pad_id_ = v.require(kPad);
        v.unk_id_ = v.require(kUnk);
        v.cls_id_ = v.require(kCls);
        v.sep_id_ = v.require(kSep);
        return v;
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open vocab file: " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            tokens.push_back(line);
        }
        return from_tokens(std::move(tokens));
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write vocab file: " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? -1 : it->second;
    }
    const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int pad_id() const { return pad_id_; }
    int unk_id() const { return unk_id_; }
    int cls_id() const { return cls_id_; }
    int sep_id() const { return sep_id_; }

 private:
    int require(const char* tok) const {
        auto it = index_.find(tok);
        if (it == index_.end())
            throw ValueError(std::string("vocabulary: missing special token ") + tok);
        return it->second;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    int pad_id_ = -1, unk_id_ = -1, cls_id_ = -1, sep_id_ = -1;
};

/// Token ids plus attention mask; mask is 0 exactly at [PAD] positions.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::uint8_t> attention_mask;

    int length() const { return static_cast<int>(ids.size()); }
};

/// The m = ceil(n_p / k) encoder inputs for one essay at segment scale k.
struct SegmentBatch {
    int scale_k = 0;
    std::vector<TokenSequence> segments;     // each wrapped [CLS] + chunk + [SEP]
    std::vector<int> content_lengths;        // chunk length without the wrapping
};

namespace detail {

inline bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

/// Lowercase + whitespace split, punctuation split off as single-char words.
inline std::vector<std::string> basic_tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (is_punct(c)) {
            flush();
            words.emplace_back(1, static_cast<char>(c));
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return words;
}

}  // namespace detail

/// Greedy longest-match-first WordPiece split of one word. A word with no
/// viable decomposition maps to a single [UNK].
inline std::vector<int> wordpiece_word(const std::string& word, const Vocabulary& vocab) {
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
        std::size_t end = word.size();
        int found = -1;
        while (end > start) {
            std::string piece = word.substr(start, end - start);
            if (start > 0) piece = "##" + piece;
            const int id = vocab.id(piece);
            if (id >= 0) {
                found = id;
                break;
            }
            --end;
        }
        if (found < 0) return {vocab.unk_id()};
        pieces.push_back(found);
        start = end;
    }
    return pieces;
}

/// Tokenize an essay into the flat WordPiece id sequence T1.
inline std::vector<int> wordpiece_tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& word : detail::basic_tokenize(text)) {
        const auto pieces = wordpiece_word(word, vocab);
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
}

/// Document-scale input: [CLS] + (first L tokens | T1 | T1 + padding) + [SEP],
/// always exactly L + 2 positions. Padding, when present, sits between the
/// text and the trailing [SEP].
inline TokenSequence build_doc_sequence(const std::vector<int>& t1, const Vocabulary& vocab,
                                        int max_tokens = 510) {
    if (max_tokens < 1) throw ValueError("build_doc_sequence: L must be >= 1");
    const int n = static_cast<int>(t1.size());
    TokenSequence seq;
    seq.ids.reserve(static_cast<std::size_t>(max_tokens) + 2);
    seq.ids.push_back(vocab.cls_id());
    if (n >= max_tokens) {
        seq.ids.insert(seq.ids.end(), t1.begin(), t1.begin() + max_tokens);
    } else {
        seq.ids.insert(seq.ids.end(), t1.begin(), t1.end());
        seq.ids.insert(seq.ids.end(), static_cast<std::size_t>(max_tokens - n), vocab.pad_id());
    }
    seq.ids.push_back(vocab.sep_id());
    seq.attention_mask.assign(seq.ids.size(), 1);
    for (std::size_t i = 0; i < seq.ids.size(); ++i)
        if (seq.ids[i] == vocab.pad_id()) seq.attention_mask[i] = 0;
    return seq;
}

/// Truncate to the first n_p tokens or pad with [PAD] up to n_p.
inline std::vector<int> fit_to_np(const std::vector<int>& t1, int n_p, int pad_id) {
    if (n_p < 1) throw ValueError("fit_to_np: n_p must be >= 1");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n_p));
    const int n = static_cast<int>(t1.size());
    if (n >= n_p) {
        out.assign(t1.begin(), t1.begin() + n_p);
    } else {
        out = t1;
        out.insert(out.end(), static_cast<std::size_t>(n_p - n), pad_id);
    }
    return out;
}

/// Cut the fitted sequence into ceil(n_p / k) chunks of length k (last chunk
/// shorter) and wrap each as [CLS] + chunk + [SEP] for encoding.
inline SegmentBatch build_segments(const std::vector<int>& t1, int n_p, int k,
                                   const Vocabulary& vocab) {
    if (k < 1 || k > n_p) throw ValueError("build_segments: scale k out of range [1, n_p]");
    const std::vector<int> fitted = fit_to_np(t1, n_p, vocab.pad_id());
    SegmentBatch batch;
    batch.scale_k = k;
    const int m = (n_p + k - 1) / k;
    batch.segments.reserve(static_cast<std::size_t>(m));
    for (int s = 0; s < m; ++s) {
        const int begin = s * k;
        const int end = std::min(n_p, begin + k);
        TokenSequence seq;
        seq.ids.reserve(static_cast<std::size_t>(end - begin) + 2);
        seq.ids.push_back(vocab.cls_id());
        seq.ids.insert(seq.ids.end(), fitted.begin() + begin, fitted.begin() + end);
        seq.ids.push_back(vocab.sep_id());
        seq.attention_mask.assign(seq.ids.size(), 1);
        for (std::size_t i = 0; i < seq.ids.size(); ++i)
            if (seq.ids[i] == vocab.pad_id()) seq.attention_mask[i] = 0;
        batch.segments.push_back(std::move(seq));
        batch.content_lengths.push_back(end - begin);
    }
    return batch;
}

/// Desk-scale vocabulary builder: specials, every seen character (standalone
/// and as "##" continuation), then the most frequent words until max_size.
inline Vocabulary build_vocab_from_texts(const std::vector<std::string>& texts, int max_size) {
    if (max_size < 8) throw ValueError("build_vocab_from_texts: max_size too small");
    std::map<std::string, std::int64_t> word_counts;
    std::map<char, bool> chars;
    for (const auto& text : texts) {
        for (const auto& w : detail::basic_tokenize(text)) {
            ++word_counts[w];
            for (char c : w) chars[c] = true;
        }
    }
    std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kCls,
                                       Vocabulary::kSep};
    for (const auto& [c, _] : chars) {
        tokens.emplace_back(1, c);
        tokens.push_back(std::string("##") + c);
    }
    std::vector<std::pair<std::string, std::int64_t>> by_freq(word_counts.begin(),
                                                              word_counts.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [word, _] : by_freq) {
        if (static_cast<int>(tokens.size()) >= max_size) break;
        if (word.size() > 1 &&
            std::find(tokens.begin(), tokens.end(), word) == tokens.end())
            tokens.push_back(word);
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

}  // namespace msas
