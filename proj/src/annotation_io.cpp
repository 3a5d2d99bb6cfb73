// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "pointbox/synthdata.hpp"

namespace pointbox {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* field, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + " is not an object");
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + field + "' in " + where);
  return *it;
}

double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError("expected a number in " + where);
  return v.get<double>();
}

std::string id_string(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError("image id must be a string or integer in " + where);
}

}  // namespace

std::string serialize_annotations(const AnnotationSet& set) {
  json images = json::array();
  json annotations = json::array();
  for (const ImageAnnotations& img : set.images) {
    img.validate();
    images.push_back({{"id", img.image_id},
                      {"width", img.width},
                      {"height", img.height},
                      {"file", img.file},
                      {"split", to_string(img.split)}});
    const std::size_t n = img.num_instances();
    for (std::size_t i = 0; i < n; ++i) {
      json a{{"image_id", img.image_id}};
      if (!img.boxes.empty()) {
        const Box& b = img.boxes[i];
        a["bbox"] = {b.x1, b.y1, b.width(), b.height()};
        a["category_id"] = b.class_id;
      } else {
        a["category_id"] = img.points[i].class_id;
      }
      if (!img.points.empty()) a["point"] = {img.points[i].x, img.points[i].y};
      if (!img.scores.empty()) a["score"] = img.scores[i];
      annotations.push_back(std::move(a));
    }
  }
  json cats = json::array();
  for (const Category& c : set.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
  json root{{"images", images}, {"annotations", annotations}, {"categories", cats}};
  return root.dump(1);
}

AnnotationSet parse_annotations(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed annotation JSON: ") + e.what());
  }
  AnnotationSet set;
  const json& images = require(root, "images", "annotation file");
  const json& anns = require(root, "annotations", "annotation file");
  if (!images.is_array() || !anns.is_array()) {
    throw ParseError("'images' and 'annotations' must be arrays");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::string where = "image " + std::to_string(k);
    const json& im = images[k];
    ImageAnnotations img;
    img.image_id = id_string(require(im, "id", where), where);
    img.width = static_cast<int>(number(require(im, "width", where), where));
    img.height = static_cast<int>(number(require(im, "height", where), where));
    img.file = im.value("file", std::string());
    if (auto s = im.find("split"); s != im.end()) {
      try {
        img.split = split_from_string(s->get<std::string>());
      } catch (const std::exception& e) {
        throw ParseError(std::string(e.what()) + " in " + where);
      }
    }
    if (!index.emplace(img.image_id, set.images.size()).second) {
      throw ParseError("duplicate image id '" + img.image_id + "' in " + where);
    }
    set.images.push_back(std::move(img));
  }

  for (std::size_t k = 0; k < anns.size(); ++k) {
    const std::string where = "annotation " + std::to_string(k);
    const json& a = anns[k];
    const std::string image_id = id_string(require(a, "image_id", where), where);
    auto it = index.find(image_id);
    if (it == index.end()) throw ParseError("unknown image_id '" + image_id + "' in " + where);
    ImageAnnotations& img = set.images[it->second];
    const int cls = static_cast<int>(number(require(a, "category_id", where), where));

    // Weakly-labeled images may omit boxes; everything else must carry one.
    const bool weak = img.split == Split::weakly_labeled;
    const bool has_box = a.contains("bbox");
    if (!weak && !has_box) require(a, "bbox", where);
    if (weak && !has_box) require(a, "point", where);
    const bool image_has_boxes = !img.boxes.empty();
    const bool image_started = img.num_instances() > 0;
    if (image_started && image_has_boxes != has_box) {
      throw ParseError("mixed boxed and box-less annotations for image '" + image_id + "' at " +
                       where);
    }
    if (has_box) {
      const json& bb = a["bbox"];
      if (!bb.is_array() || bb.size() != 4) throw ParseError("bbox must be [x,y,w,h] in " + where);
      const double x = number(bb[0], where), y = number(bb[1], where);
      const double w = number(bb[2], where), h = number(bb[3], where);
      if (!(w >= 0.0 && h >= 0.0)) throw ParseError("negative bbox size in " + where);
      img.boxes.push_back({x, y, x + w, y + h, cls});
    }
    if (auto p = a.find("point"); p != a.end()) {
      if (!p->is_array() || p->size() != 2) throw ParseError("point must be [x,y] in " + where);
      if (image_started && img.points.empty()) {
        throw ParseError("point present only on some annotations of image '" + image_id + "' at " +
                         where);
      }
      img.points.push_back({number((*p)[0], where), number((*p)[1], where), cls});
    } else if (!img.points.empty()) {
      throw ParseError("missing field 'point' in " + where);
    }
    if (auto s = a.find("score"); s != a.end()) {
      img.scores.push_back(number(*s, where));
    } else if (!img.scores.empty()) {
      throw ParseError("missing field 'score' in " + where);
    }
  }
  for (const ImageAnnotations& img : set.images) {
    try {
      img.validate();
    } catch (const std::exception& e) {
      throw ParseError(e.what());
    }
  }

  if (auto c = root.find("categories"); c != root.end()) {
    for (std::size_t k = 0; k < c->size(); ++k) {
      const std::string where = "category " + std::to_string(k);
      const json& cj = (*c)[k];
      set.categories.push_back({static_cast<int>(number(require(cj, "id", where), where)),
                                cj.value("name", std::string())});
    }
  }
  return set;
}

AnnotationSet read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_annotations(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_annotations(const std::filesystem::path& path, const AnnotationSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotation file " + path.string());
  out << serialize_annotations(set) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image image;
  image.width = static_cast<int>(png.width);
  image.height = static_cast<int>(png.height);
  image.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return image;
}

}  // namespace pointbox
