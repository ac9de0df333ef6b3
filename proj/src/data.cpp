#include "cerberus/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "cerberus/parallel.hpp"
#include "cerberus/rng.hpp"

namespace cerberus::data {

namespace fs = std::filesystem;
using nlohmann::json;

int TaskSchema::class_count(Task t) const {
  return static_cast<int>(names(t).size());
}

const std::vector<std::string>& TaskSchema::names(Task t) const {
  switch (t) {
    case Task::Attribute:
      return attribute;
    case Task::Affordance:
      return affordance;
    case Task::Semantic:
      return semantic;
  }
  return semantic;
}

void TaskSchema::validate() const {
  if (semantic.empty() || affordance.empty() || attribute.empty()) {
    throw ConfigError("schema: every task needs at least one class");
  }
  if (affordance_rules.size() != semantic.size() || attribute_rules.size() != semantic.size()) {
    throw ConfigError("schema: one derivation rule entry per semantic class is required");
  }
  for (const auto& rule : affordance_rules) {
    for (int idx : rule) {
      if (idx < 0 || idx >= static_cast<int>(affordance.size())) {
        throw ConfigError("schema: affordance rule index out of range");
      }
    }
  }
  for (const auto& rule : attribute_rules) {
    for (int idx : rule) {
      if (idx < 0 || idx >= static_cast<int>(attribute.size())) {
        throw ConfigError("schema: attribute rule index out of range");
      }
    }
  }
}

TaskSchema TaskSchema::default_schema() {
  TaskSchema s;
  s.semantic = {"floor", "wall", "ceiling", "table", "chair", "bed", "cabinet", "window"};
  s.affordance = {"walkable", "sittable", "lyable", "movable", "reachable"};
  s.attribute = {"textured", "painted", "wood", "soft", "metal", "glass"};
  s.affordance_rules = {
      {0},  // floor -> walkable
      {},   // wall
      {},   // ceiling
      {3},  // table -> movable
      {1},  // chair -> sittable
      {2},  // bed -> lyable
      {4},  // cabinet -> reachable
      {},   // window
  };
  s.attribute_rules = {
      {0},  // floor -> textured
      {1},  // wall -> painted
      {},   // ceiling
      {2},  // table -> wood
      {},   // chair
      {3},  // bed -> soft
      {4},  // cabinet -> metal
      {5},  // window -> glass
  };
  return s;
}

void GeneratorConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("generator: extent must be at least 16");
  if (count <= 0 || train_count <= 0 || train_count >= count) {
    throw ConfigError("generator: need 0 < train_count < count");
  }
  if (max_shift < 0 || max_shift > 16) throw ConfigError("generator: max_shift out of range");
  for (int r : raster_sizes) {
    if (r < 8) throw ConfigError("generator: raster sizes must be at least 8");
  }
  if (noise < 0.0 || noise > 0.3) throw ConfigError("generator: noise must lie in [0, 0.3]");
}

const WeakSample& Dataset::by_id(int id) const {
  if (id < 0 || id >= static_cast<int>(samples.size()) || samples[static_cast<std::size_t>(id)].id != id) {
    for (const WeakSample& s : samples) {
      if (s.id == id) return s;
    }
    throw ConfigError("dataset: no sample with id " + std::to_string(id));
  }
  return samples[static_cast<std::size_t>(id)];
}

BinaryStack derive_planes(const ByteRaster& semantic, const TaskSchema& schema, Task task) {
  const auto& rules = task == Task::Affordance ? schema.affordance_rules : schema.attribute_rules;
  if (task == Task::Semantic) throw ConfigError("derive_planes: semantic has no bit planes");
  BinaryStack planes(schema.class_count(task), semantic.h, semantic.w);
  for (int i = 0; i < semantic.h; ++i) {
    for (int j = 0; j < semantic.w; ++j) {
      const int cls = semantic.at(i, j);
      if (cls >= static_cast<int>(rules.size())) continue;
      for (int bit : rules[static_cast<std::size_t>(cls)]) planes.at(bit, i, j) = 1;
    }
  }
  return planes;
}

namespace {

struct Canvas {
  int h = 0;
  int w = 0;
  ByteRaster semantic;
  std::vector<double> rgb;  // 3 planes, [0, 1]

  double& color(int c, int i, int j) { return rgb[(static_cast<std::size_t>(c) * h + i) * w + j]; }
};

struct ClassColor {
  double r, g, b;
};

// Base palette indexed by the default schema's semantic classes.
constexpr ClassColor kPalette[8] = {
    {0.55, 0.40, 0.25},  // floor
    {0.75, 0.73, 0.68},  // wall
    {0.92, 0.92, 0.95},  // ceiling
    {0.36, 0.22, 0.10},  // table
    {0.80, 0.18, 0.16},  // chair
    {0.22, 0.35, 0.74},  // bed
    {0.55, 0.55, 0.22},  // cabinet
    {0.45, 0.74, 0.94},  // window
};

void paint_rect(Canvas& canvas, int y0, int x0, int y1, int x1, int cls, const ClassColor& col) {
  y0 = std::max(0, y0);
  x0 = std::max(0, x0);
  y1 = std::min(canvas.h, y1);
  x1 = std::min(canvas.w, x1);
  for (int i = y0; i < y1; ++i) {
    for (int j = x0; j < x1; ++j) {
      canvas.semantic.at(i, j) = static_cast<std::uint8_t>(cls);
      canvas.color(0, i, j) = col.r;
      canvas.color(1, i, j) = col.g;
      canvas.color(2, i, j) = col.b;
    }
  }
}

void paint_ellipse(Canvas& canvas, double cy, double cx, double ry, double rx, int cls,
                   const ClassColor& col) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(canvas.h, static_cast<int>(std::ceil(cy + ry)) + 1);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(canvas.w, static_cast<int>(std::ceil(cx + rx)) + 1);
  for (int i = y0; i < y1; ++i) {
    for (int j = x0; j < x1; ++j) {
      const double dy = (i + 0.5 - cy) / ry;
      const double dx = (j + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) {
        canvas.semantic.at(i, j) = static_cast<std::uint8_t>(cls);
        canvas.color(0, i, j) = col.r;
        canvas.color(1, i, j) = col.g;
        canvas.color(2, i, j) = col.b;
      }
    }
  }
}

ClassColor jitter(const ClassColor& base, Rng& rng, double amount) {
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  return {clamp01(base.r + rng.uniform(-amount, amount)),
          clamp01(base.g + rng.uniform(-amount, amount)),
          clamp01(base.b + rng.uniform(-amount, amount))};
}

Canvas render_scene(Rng& rng, const GeneratorConfig& cfg, int ch, int cw) {
  Canvas canvas;
  canvas.h = ch;
  canvas.w = cw;
  canvas.semantic = ByteRaster(ch, cw, 1);  // wall by default
  canvas.rgb.assign(static_cast<std::size_t>(3) * ch * cw, 0.0);

  const int ceiling_rows = static_cast<int>(rng.uniform(0.05, 0.12) * ch);
  const int horizon = static_cast<int>(rng.uniform(0.48, 0.64) * ch);

  paint_rect(canvas, 0, 0, ch, cw, 1, jitter(kPalette[1], rng, 0.03));        // wall
  paint_rect(canvas, 0, 0, ceiling_rows, cw, 2, jitter(kPalette[2], rng, 0.02));
  paint_rect(canvas, horizon, 0, ch, cw, 0, jitter(kPalette[0], rng, 0.03));  // floor

  // Window on the wall band; kept small so sparse pixel supervision tends
  // to miss it.
  if (rng.uniform() < 0.8) {
    const int sy = std::max(3, static_cast<int>(rng.uniform(0.08, 0.15) * ch));
    const int sx = std::max(3, static_cast<int>(rng.uniform(0.08, 0.16) * cw));
    const int lo = ceiling_rows + 1;
    const int hi = horizon - sy - 1;
    if (hi > lo) {
      const int y = rng.uniform_int(lo, hi);
      const int x = rng.uniform_int(1, std::max(2, cw - sx - 1));
      paint_rect(canvas, y, x, y + sy, x + sx, 7, jitter(kPalette[7], rng, 0.04));
    }
  }

  // Bed: large block on the floor.
  if (rng.uniform() < 0.7) {
    const int sy = std::max(4, static_cast<int>(rng.uniform(0.16, 0.26) * ch));
    const int sx = std::max(5, static_cast<int>(rng.uniform(0.22, 0.34) * cw));
    const int y = rng.uniform_int(horizon - 2, std::max(horizon - 1, ch - sy - 1));
    const int x = rng.uniform_int(0, std::max(1, cw - sx - 1));
    paint_rect(canvas, y, x, y + sy, x + sx, 5, jitter(kPalette[5], rng, 0.04));
  }

  // Cabinet: straddles the horizon; small-ish.
  if (rng.uniform() < 0.8) {
    const int sy = std::max(4, static_cast<int>(rng.uniform(0.14, 0.22) * ch));
    const int sx = std::max(3, static_cast<int>(rng.uniform(0.08, 0.14) * cw));
    const int y = std::max(ceiling_rows + 1, horizon - sy / 2);
    const int x = rng.uniform_int(0, std::max(1, cw - sx - 1));
    paint_rect(canvas, y, x, y + sy, x + sx, 6, jitter(kPalette[6], rng, 0.04));
  }

  // Table: rectangle or ellipse on the floor.
  if (rng.uniform() < 0.8) {
    const int sy = std::max(3, static_cast<int>(rng.uniform(0.10, 0.16) * ch));
    const int sx = std::max(4, static_cast<int>(rng.uniform(0.14, 0.22) * cw));
    const int y = rng.uniform_int(horizon, std::max(horizon + 1, ch - sy - 1));
    const int x = rng.uniform_int(0, std::max(1, cw - sx - 1));
    const ClassColor col = jitter(kPalette[3], rng, 0.04);
    if (rng.uniform() < 0.3) {
      paint_ellipse(canvas, y + sy / 2.0, x + sx / 2.0, sy / 2.0, sx / 2.0, 3, col);
    } else {
      paint_rect(canvas, y, x, y + sy, x + sx, 3, col);
    }
  }

  // One or two chairs; smallest objects in the scene.
  const int chairs = rng.uniform() < 0.85 ? rng.uniform_int(1, 2) : 0;
  for (int c = 0; c < chairs; ++c) {
    const int sy = std::max(3, static_cast<int>(rng.uniform(0.07, 0.12) * ch));
    const int sx = std::max(3, static_cast<int>(rng.uniform(0.07, 0.12) * cw));
    const int y = rng.uniform_int(horizon, std::max(horizon + 1, ch - sy - 1));
    const int x = rng.uniform_int(0, std::max(1, cw - sx - 1));
    const ClassColor col = jitter(kPalette[4], rng, 0.04);
    if (rng.uniform() < 0.5) {
      paint_ellipse(canvas, y + sy / 2.0, x + sx / 2.0, sy / 2.0, sx / 2.0, 4, col);
    } else {
      paint_rect(canvas, y, x, y + sy, x + sx, 4, col);
    }
  }

  // Floor stripes plus global pixel noise.
  for (int i = 0; i < ch; ++i) {
    for (int j = 0; j < cw; ++j) {
      const bool stripe = (i / 3) % 2 == 0;
      for (int c = 0; c < 3; ++c) {
        double v = canvas.color(c, i, j);
        if (canvas.semantic.at(i, j) == 0) v += stripe ? 0.045 : -0.045;
        v += rng.uniform(-cfg.noise, cfg.noise);
        canvas.color(c, i, j) = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return canvas;
}

RgbImage crop_image(const Canvas& canvas, int oy, int ox, int h, int w) {
  RgbImage img(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int c = 0; c < 3; ++c) {
        img.at(i, j, c) = static_cast<std::uint8_t>(
            std::lround(canvas.rgb[(static_cast<std::size_t>(c) * canvas.h + oy + i) * canvas.w +
                                   ox + j] *
                        255.0));
      }
    }
  }
  return img;
}

ByteRaster sample_labels(const ByteRaster& canvas_sem, int oy, int ox, int view_h, int view_w,
                         int raster_h, int raster_w) {
  ByteRaster out(raster_h, raster_w);
  for (int i = 0; i < raster_h; ++i) {
    int si = static_cast<int>((i + 0.5) * view_h / raster_h);
    if (si >= view_h) si = view_h - 1;
    for (int j = 0; j < raster_w; ++j) {
      int sj = static_cast<int>((j + 0.5) * view_w / raster_w);
      if (sj >= view_w) sj = view_w - 1;
      out.at(i, j) = canvas_sem.at(oy + si, ox + sj);
    }
  }
  return out;
}

}  // namespace

WeakSample generate_sample(std::uint64_t seed, const GeneratorConfig& cfg,
                           const TaskSchema& schema, int index) {
  cfg.validate();
  schema.validate();
  if (schema.semantic.size() > 8) {
    throw ConfigError("generator: the synthetic renderer supports up to 8 semantic classes");
  }
  Rng rng(mix_keys(seed, static_cast<std::uint64_t>(index) + 0x5u));

  const int margin = std::max(4, cfg.max_shift);
  const int ch = cfg.height + 2 * margin;
  const int cw = cfg.width + 2 * margin;
  Canvas canvas = render_scene(rng, cfg, ch, cw);

  WeakSample sample;
  sample.id = index;
  sample.canon_semantic =
      sample_labels(canvas.semantic, margin, margin, cfg.height, cfg.width, cfg.height, cfg.width);
  sample.canon_affordance = derive_planes(sample.canon_semantic, schema, Task::Affordance);
  sample.canon_attribute = derive_planes(sample.canon_semantic, schema, Task::Attribute);

  for (Task t : kAllTasks) {
    TaskView& view = sample.views[static_cast<std::size_t>(t)];
    view.shift_y = rng.uniform_int(-cfg.max_shift, cfg.max_shift);
    view.shift_x = rng.uniform_int(-cfg.max_shift, cfg.max_shift);
    const int oy = margin + view.shift_y;
    const int ox = margin + view.shift_x;
    view.image = crop_image(canvas, oy, ox, cfg.height, cfg.width);
    const int raster = cfg.raster_sizes[static_cast<std::size_t>(t)];
    ByteRaster sem = sample_labels(canvas.semantic, oy, ox, cfg.height, cfg.width, raster, raster);
    if (t == Task::Semantic) {
      view.semantic = std::move(sem);
    } else {
      view.planes = derive_planes(sem, schema, t);
    }
  }
  return sample;
}

Dataset generate_dataset(const GeneratorConfig& cfg, const TaskSchema& schema, int threads) {
  cfg.validate();
  Dataset ds;
  ds.schema = schema;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.samples.resize(static_cast<std::size_t>(cfg.count));
  parallel_for(cfg.count, threads, [&](int i) {
    ds.samples[static_cast<std::size_t>(i)] = generate_sample(cfg.seed, cfg, schema, i);
  });
  for (int i = 0; i < cfg.count; ++i) {
    (i < cfg.train_count ? ds.train_ids : ds.test_ids).push_back(i);
  }
  return ds;
}

namespace {

json schema_to_json(const TaskSchema& schema) {
  json j;
  j["semantic"] = schema.semantic;
  j["affordance"] = schema.affordance;
  j["attribute"] = schema.attribute;
  json aff_rules = json::object();
  json attr_rules = json::object();
  for (std::size_t c = 0; c < schema.semantic.size(); ++c) {
    json aff = json::array();
    for (int idx : schema.affordance_rules[c]) aff.push_back(schema.affordance[static_cast<std::size_t>(idx)]);
    aff_rules[schema.semantic[c]] = aff;
    json attr = json::array();
    for (int idx : schema.attribute_rules[c]) attr.push_back(schema.attribute[static_cast<std::size_t>(idx)]);
    attr_rules[schema.semantic[c]] = attr;
  }
  j["affordance_rules"] = aff_rules;
  j["attribute_rules"] = attr_rules;
  return j;
}

TaskSchema schema_from_json(const json& j, const std::string& where) {
  TaskSchema schema;
  try {
    schema.semantic = j.at("semantic").get<std::vector<std::string>>();
    schema.affordance = j.at("affordance").get<std::vector<std::string>>();
    schema.attribute = j.at("attribute").get<std::vector<std::string>>();
    auto index_of = [](const std::vector<std::string>& names, const std::string& name,
                       const std::string& ctx) {
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
      }
      throw ParseError("unknown class \"" + name + "\" in " + ctx);
    };
    schema.affordance_rules.resize(schema.semantic.size());
    schema.attribute_rules.resize(schema.semantic.size());
    const json& aff_rules = j.at("affordance_rules");
    const json& attr_rules = j.at("attribute_rules");
    for (std::size_t c = 0; c < schema.semantic.size(); ++c) {
      const std::string& cls = schema.semantic[c];
      if (aff_rules.contains(cls)) {
        for (const auto& name : aff_rules.at(cls)) {
          schema.affordance_rules[c].push_back(
              index_of(schema.affordance, name.get<std::string>(), where));
        }
      }
      if (attr_rules.contains(cls)) {
        for (const auto& name : attr_rules.at(cls)) {
          schema.attribute_rules[c].push_back(
              index_of(schema.attribute, name.get<std::string>(), where));
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("schema in " + where + ": " + e.what());
  }
  schema.validate();
  return schema;
}

std::string sample_dir_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", id);
  return buf;
}

void save_planes(const std::string& dir, const std::string& prefix, const BinaryStack& planes,
                 const std::vector<std::string>& names) {
  for (int p = 0; p < planes.k; ++p) {
    ByteRaster bits(planes.h, planes.w);
    for (std::size_t i = 0; i < bits.v.size(); ++i) {
      bits.v[i] = planes.v[static_cast<std::size_t>(p) * bits.v.size() + i] ? 255 : 0;
    }
    write_png_gray(dir + "/" + prefix + names[static_cast<std::size_t>(p)] + ".png", bits);
  }
}

BinaryStack load_planes(const std::string& dir, const std::string& prefix,
                        const std::vector<std::string>& names) {
  BinaryStack planes;
  for (std::size_t p = 0; p < names.size(); ++p) {
    ByteRaster bits = read_png_gray(dir + "/" + prefix + names[p] + ".png");
    if (p == 0) planes = BinaryStack(static_cast<int>(names.size()), bits.h, bits.w);
    if (bits.h != planes.h || bits.w != planes.w) {
      throw ParseError("inconsistent plane extents under " + dir);
    }
    for (std::size_t i = 0; i < bits.v.size(); ++i) {
      planes.v[p * bits.v.size() + i] = bits.v[i] > 127 ? 1 : 0;
    }
  }
  return planes;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  fs::create_directories(dir + "/samples");

  json manifest;
  manifest["format"] = "cerberus-dataset";
  manifest["version"] = 1;
  manifest["height"] = dataset.height;
  manifest["width"] = dataset.width;
  manifest["schema"] = schema_to_json(dataset.schema);
  manifest["split"] = {{"train", dataset.train_ids}, {"test", dataset.test_ids}};
  json sample_list = json::array();

  for (const WeakSample& sample : dataset.samples) {
    const std::string sdir = dir + "/samples/" + sample_dir_name(sample.id);
    fs::create_directories(sdir + "/canonical");
    write_png_gray(sdir + "/canonical/semantic.png", sample.canon_semantic);
    save_planes(sdir + "/canonical", "affordance_", sample.canon_affordance,
                dataset.schema.affordance);
    save_planes(sdir + "/canonical", "attribute_", sample.canon_attribute,
                dataset.schema.attribute);

    json shifts = json::array();
    json rasters = json::array();
    for (Task t : kAllTasks) {
      const TaskView& view = sample.views[static_cast<std::size_t>(t)];
      const std::string tdir = sdir + "/" + task_name(t);
      fs::create_directories(tdir);
      write_png_rgb(tdir + "/image.png", view.image);
      if (t == Task::Semantic) {
        write_png_gray(tdir + "/labels.png", view.semantic);
        rasters.push_back(view.semantic.h);
      } else {
        save_planes(tdir, "label_", view.planes, dataset.schema.names(t));
        rasters.push_back(view.planes.h);
      }
      shifts.push_back({view.shift_y, view.shift_x});
    }
    sample_list.push_back({{"id", sample.id}, {"shifts", shifts}, {"raster_sizes", rasters}});
  }
  manifest["samples"] = sample_list;

  std::ofstream os(dir + "/manifest.json");
  if (!os) throw IoError("cannot write " + dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "cerberus-dataset") {
    throw ParseError(manifest_path + ": not a dataset manifest");
  }

  Dataset ds;
  ds.schema = schema_from_json(manifest.at("schema"), manifest_path);
  try {
    ds.height = manifest.at("height").get<int>();
    ds.width = manifest.at("width").get<int>();
    ds.train_ids = manifest.at("split").at("train").get<std::vector<int>>();
    ds.test_ids = manifest.at("split").at("test").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }

  for (const auto& entry : manifest.at("samples")) {
    WeakSample sample;
    sample.id = entry.at("id").get<int>();
    const std::string sdir = dir + "/samples/" + sample_dir_name(sample.id);
    const std::string cdir = sdir + "/canonical";
    if (!fs::exists(cdir)) {
      throw ParseError("missing canonical subdirectory for sample " + std::to_string(sample.id) +
                       " in " + dir);
    }
    sample.canon_semantic = read_png_gray(cdir + "/semantic.png");
    sample.canon_affordance = load_planes(cdir, "affordance_", ds.schema.affordance);
    sample.canon_attribute = load_planes(cdir, "attribute_", ds.schema.attribute);

    const auto shifts = entry.at("shifts");
    for (Task t : kAllTasks) {
      TaskView& view = sample.views[static_cast<std::size_t>(t)];
      const std::string tdir = sdir + "/" + task_name(t);
      if (!fs::exists(tdir)) {
        throw ParseError(std::string("missing task subdirectory \"") + task_name(t) +
                         "\" for sample " + std::to_string(sample.id) + " in " + dir);
      }
      view.image = read_png_rgb(tdir + "/image.png");
      if (t == Task::Semantic) {
        view.semantic = read_png_gray(tdir + "/labels.png");
      } else {
        view.planes = load_planes(tdir, "label_", ds.schema.names(t));
      }
      view.shift_y = shifts[static_cast<std::size_t>(t)][0].get<int>();
      view.shift_x = shifts[static_cast<std::size_t>(t)][1].get<int>();
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace cerberus::data
