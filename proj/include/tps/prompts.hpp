#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tps::prompts {

using Bindings = std::map<std::string, std::string>;

/// Replaces every "{name}" with bindings.at(name). Names may contain spaces.
/// Substituted text is not rescanned. Throws ValidationError on an unbound
/// placeholder or an unterminated "{".
std::string render(std::string_view tmpl, const Bindings& bindings);

/// Placeholder names in order of first appearance.
std::vector<std::string> placeholders(std::string_view tmpl);

/// Templates compiled into the binary from assets/prompts.
std::vector<std::string> builtin_names();
std::optional<std::string_view> builtin(std::string_view name);

/// Template lookup with optional on-disk overrides: "<dir>/<name>.txt" wins
/// over the builtin when present. File contents are used byte for byte.
class TemplateSet {
 public:
  TemplateSet() = default;
  explicit TemplateSet(std::filesystem::path override_dir);

  [[nodiscard]] std::string get(std::string_view name) const;
  [[nodiscard]] std::string render(std::string_view name, const Bindings& bindings) const;
  /// SHA-256 over the names and contents of every template this set resolves.
  [[nodiscard]] std::string fingerprint() const;

 private:
  std::optional<std::filesystem::path> dir_;
};

}  // namespace tps::prompts
