#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pcq/geometry.hpp"

namespace pcq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point shared by the `pcq` binary and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A cloud to score or evaluate, with whatever the source knows about it.
struct CorpusItem {
  std::string id;
  std::optional<std::string> category;
  std::optional<double> s_g;
  PointCloud cloud;
};

/// Loads a corpus from `dir`:
///   - a dataset directory (manifest.jsonl with dataset records): the crops
///     of the requested split ("train", "test" or "all");
///   - a shape bank directory (manifest.jsonl with id/category/file);
///   - otherwise every *.pcq / *.xyz file, sorted by name.
[[nodiscard]] std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir, const std::string& split);

/// Column-aligned rendering of a table whose first row is the header.
[[nodiscard]] std::string aligned(const std::vector<std::vector<std::string>>& rows);
[[nodiscard]] std::string to_csv(const std::vector<std::vector<std::string>>& rows);

/// Host name, CPU model, hardware threads and compiler.
[[nodiscard]] std::string machine_identifier();

}  // namespace pcq::cli
