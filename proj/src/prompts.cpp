#include "tps/prompts.hpp"

#include <algorithm>
#include <set>

#include "prompt_assets.hpp"
#include "tps/backend.hpp"
#include "tps/errors.hpp"
#include "tps/io.hpp"

namespace tps::prompts {

namespace {

template <class OnText, class OnName>
void scan(std::string_view tmpl, OnText on_text, OnName on_name) {
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      on_text(tmpl.substr(pos));
      return;
    }
    on_text(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open + 1);
    if (close == std::string_view::npos) throw ValidationError("unterminated placeholder in template");
    on_name(std::string(tmpl.substr(open + 1, close - open - 1)));
    pos = close + 1;
  }
}

}  // namespace

std::string render(std::string_view tmpl, const Bindings& bindings) {
  std::string out;
  scan(
      tmpl, [&](std::string_view text) { out.append(text); },
      [&](const std::string& name) {
        auto it = bindings.find(name);
        if (it == bindings.end()) throw ValidationError("template placeholder {" + name + "} is not bound");
        out.append(it->second);
      });
  return out;
}

std::vector<std::string> placeholders(std::string_view tmpl) {
  std::vector<std::string> names;
  scan(
      tmpl, [](std::string_view) {},
      [&](const std::string& name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      });
  return names;
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : assets::prompt_table()) names.emplace_back(name);
  std::sort(names.begin(), names.end());
  return names;
}

std::optional<std::string_view> builtin(std::string_view name) {
  for (const auto& [n, text] : assets::prompt_table())
    if (n == name) return text;
  return std::nullopt;
}

TemplateSet::TemplateSet(std::filesystem::path override_dir) {
  if (!override_dir.empty()) {
    if (!std::filesystem::is_directory(override_dir))
      throw ValidationError("template directory does not exist: " + override_dir.string());
    dir_ = std::move(override_dir);
  }
}

std::string TemplateSet::get(std::string_view name) const {
  if (dir_) {
    const auto path = *dir_ / (std::string(name) + ".txt");
    if (std::filesystem::exists(path)) return io::read_file(path);
  }
  if (auto text = builtin(name)) return std::string(*text);
  throw ValidationError("unknown prompt template \"" + std::string(name) + "\"");
}

std::string TemplateSet::render(std::string_view name, const Bindings& bindings) const {
  return prompts::render(get(name), bindings);
}

std::string TemplateSet::fingerprint() const {
  std::set<std::string> names;
  for (auto& n : builtin_names()) names.insert(n);
  if (dir_) {
    for (const auto& entry : std::filesystem::directory_iterator(*dir_))
      if (entry.path().extension() == ".txt") names.insert(entry.path().stem().string());
  }
  std::string blob;
  for (const auto& n : names) {
    const auto text = get(n);
    blob += n + '\0' + std::to_string(text.size()) + '\0' + text;
  }
  return lm::sha256_hex(blob);
}

}  // namespace tps::prompts
