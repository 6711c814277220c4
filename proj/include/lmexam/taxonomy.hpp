#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lmexam/error.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

inline constexpr std::string_view kPathSeparator = " > ";

/// One category of the domain taxonomy, root first.
class DomainPath {
 public:
  DomainPath() = default;

  explicit DomainPath(std::vector<std::string> segments) : segments_(std::move(segments)) {
    require(!segments_.empty(), "domain path needs at least one segment");
    for (auto& s : segments_) {
      s = std::string(trim(s));
      require(!s.empty(), "domain path segments must be non-empty");
    }
  }

  /// Parses "A > B > C". Segments are trimmed; empty segments are rejected.
  static DomainPath parse(std::string_view display) {
    std::vector<std::string> segments;
    std::size_t start = 0;
    while (true) {
      auto pos = display.find('>', start);
      auto piece = display.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      segments.emplace_back(trim(piece));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return DomainPath(std::move(segments));
  }

  const std::vector<std::string>& segments() const { return segments_; }
  std::string display() const { return join(segments_, kPathSeparator); }

  friend bool operator==(const DomainPath&, const DomainPath&) = default;

 private:
  std::vector<std::string> segments_;
};

class DomainTaxonomy {
 public:
  /// One " > "-joined path per line. Blank lines are skipped, order is kept.
  static DomainTaxonomy load(std::string_view source) {
    DomainTaxonomy tax;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    for (auto line : split_lines(source)) {
      ++line_no;
      if (trim(line).empty()) continue;
      auto path = DomainPath::parse(trim(line));
      auto key = path.display();
      if (!seen.insert(key).second)
        fail(Errc::DuplicatePath, "line " + std::to_string(line_no) + " repeats '" + key + "'");
      tax.entries_.push_back(std::move(path));
    }
    if (tax.entries_.empty()) fail(Errc::EmptyTaxonomy, "no domain paths in taxonomy source");
    return tax;
  }

  const std::vector<DomainPath>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// n distinct paths drawn uniformly without replacement (seeded Fisher-Yates
  /// prefix over SplitMix64). Output order is the draw order.
  std::vector<DomainPath> sample(std::size_t n, std::uint64_t seed) const {
    if (n > entries_.size())
      fail(Errc::SampleTooLarge, "requested " + std::to_string(n) + " domains from a taxonomy of " +
                                     std::to_string(entries_.size()));
    std::vector<DomainPath> out;
    out.reserve(n);
    for (auto i : sample_indices(entries_.size(), n, seed)) out.push_back(entries_[i]);
    return out;
  }

  /// Full seeded permutation; the first n entries equal sample(n, seed).
  std::vector<DomainPath> shuffled(std::uint64_t seed) const { return sample(entries_.size(), seed); }

 private:
  std::vector<DomainPath> entries_;
};

inline DomainTaxonomy load_taxonomy(std::string_view source) { return DomainTaxonomy::load(source); }

inline std::vector<DomainPath> sample_domains(const DomainTaxonomy& taxonomy, std::size_t n, std::uint64_t seed) {
  return taxonomy.sample(n, seed);
}

}  // namespace lmexam
