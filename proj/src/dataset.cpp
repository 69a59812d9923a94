#include "edgefool/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "edgefool/error.hpp"
#include "edgefool/image_io.hpp"

namespace fs = std::filesystem;

namespace edgefool {

std::vector<LabeledImage> Dataset::labeled() const {
  std::vector<LabeledImage> out;
  out.reserve(items.size());
  for (const DatasetItem& it : items) out.push_back({it.image, it.label});
  return out;
}

std::vector<Image> Dataset::images() const {
  std::vector<Image> out;
  out.reserve(items.size());
  for (const DatasetItem& it : items) out.push_back(it.image);
  return out;
}

Dataset load_dataset(const std::string& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error("dataset '" + root + "' is not a directory");
  Dataset ds;
  for (const fs::directory_entry& e : fs::directory_iterator(root)) {
    if (e.is_directory()) ds.class_names.push_back(e.path().filename().string());
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.empty()) throw Error("dataset '" + root + "' has no class directories");
  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    const fs::path dir = fs::path(root) / ds.class_names[label];
    std::vector<std::string> files;
    for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_path(e.path().string())) files.push_back(e.path().string());
    }
    if (files.empty()) throw Error("dataset class '" + ds.class_names[label] + "' has no images");
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) ds.items.push_back({f, read_image(f), static_cast<int>(label)});
  }
  return ds;
}

void save_dataset(const std::string& root, const std::vector<std::string>& class_names,
                  const std::vector<LabeledImage>& items) {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const std::string& name : class_names) fs::create_directories(fs::path(root) / name);
  for (const LabeledImage& item : items) {
    if (item.label < 0 || static_cast<std::size_t>(item.label) >= class_names.size()) {
      throw ConfigError("save_dataset: label " + std::to_string(item.label) + " has no class name");
    }
    const std::string& name = class_names[static_cast<std::size_t>(item.label)];
    char index[16];
    std::snprintf(index, sizeof index, "%06zu", counts[static_cast<std::size_t>(item.label)]++);
    write_png((fs::path(root) / name / (name + "_" + index + ".png")).string(), item.image);
  }
}

}  // namespace edgefool
