#pragma once

#include <string>
#include <vector>

#include "edgefool/classifier.hpp"

namespace edgefool {

struct DatasetItem {
  std::string path;
  Image image;
  int label = 0;
};

/// Class-per-directory image tree: `root/<class>/<file>.{png,ppm}`.
/// Labels follow the lexicographic order of the class directory names;
/// files inside a class are read in lexicographic order too.
struct Dataset {
  std::vector<std::string> class_names;
  std::vector<DatasetItem> items;

  std::vector<LabeledImage> labeled() const;
  std::vector<Image> images() const;
};

// Files with other extensions are ignored. Throws on unreadable or non-RGB
// images, classes without images, and a root without class directories.
Dataset load_dataset(const std::string& root);

// Writes `root/<class>/<class>_<index>.png` for each item (index is six digits).
void save_dataset(const std::string& root, const std::vector<std::string>& class_names,
                  const std::vector<LabeledImage>& items);

}  // namespace edgefool
