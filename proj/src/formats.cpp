#include "grasp/formats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "grasp/error.hpp"

namespace grasp {

namespace {

std::vector<std::string_view> split_lines(std::string_view bytes) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view line = bytes.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

bool blank(std::string_view line) { return split_ws(line).empty(); }

bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_positive(std::string_view token, std::size_t& out) {
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size() && out > 0;
}

[[noreturn]] void header_error(const std::string& what) {
  throw Error(Errc::MalformedHeader, what);
}

void append_double(std::string& out, double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  out.append(buf, ptr);
}

constexpr std::array<std::string_view, 10> kHeaderKeys = {
    "VERSION", "FIELDS", "SIZE",      "TYPE",   "COUNT",
    "WIDTH",   "HEIGHT", "VIEWPOINT", "POINTS", "DATA"};

}  // namespace

PointCloud parse_pcd(std::string_view bytes) {
  const auto lines = split_lines(bytes);
  std::size_t next_key = 0;
  std::size_t line_no = 0;
  std::size_t field_count = 0;
  bool with_normals = false;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t points = 0;

  for (; line_no < lines.size() && next_key < kHeaderKeys.size(); ++line_no) {
    const std::string_view line = lines[line_no];
    if (blank(line) || line.front() == '#') continue;
    const auto tokens = split_ws(line);
    const std::string_view key = tokens.front();
    const auto it = std::find(kHeaderKeys.begin(), kHeaderKeys.end(), key);
    if (it == kHeaderKeys.end()) {
      header_error("unknown header key '" + std::string(key) + "'");
    }
    const auto position = static_cast<std::size_t>(it - kHeaderKeys.begin());
    if (position < next_key) header_error("duplicate header key " + std::string(key));
    if (position > next_key) {
      header_error("missing header key " + std::string(kHeaderKeys[next_key]) +
                   " before " + std::string(key));
    }
    ++next_key;
    const std::vector<std::string_view> values(tokens.begin() + 1, tokens.end());

    if (key == "VERSION") {
      if (values.size() != 1 || (values[0] != ".7" && values[0] != "0.7")) {
        header_error("only PCD VERSION 0.7 is supported");
      }
    } else if (key == "FIELDS") {
      static const std::vector<std::string_view> xyz = {"x", "y", "z"};
      static const std::vector<std::string_view> xyzn = {
          "x", "y", "z", "normal_x", "normal_y", "normal_z"};
      if (values == xyz) {
        field_count = 3;
      } else if (values == xyzn) {
        field_count = 6;
        with_normals = true;
      } else {
        throw Error(Errc::UnsupportedFields,
                    "FIELDS must be 'x y z' or 'x y z normal_x normal_y normal_z'");
      }
    } else if (key == "SIZE") {
      if (values.size() != field_count) header_error("SIZE entry count != FIELDS");
      for (auto v : values) {
        if (v != "4" && v != "8") header_error("SIZE entries must be 4 or 8");
      }
    } else if (key == "TYPE") {
      if (values.size() != field_count) header_error("TYPE entry count != FIELDS");
      for (auto v : values) {
        if (v != "F") throw Error(Errc::UnsupportedFields, "only TYPE F is supported");
      }
    } else if (key == "COUNT") {
      if (values.size() != field_count) header_error("COUNT entry count != FIELDS");
      for (auto v : values) {
        if (v != "1") throw Error(Errc::UnsupportedFields, "only COUNT 1 is supported");
      }
    } else if (key == "WIDTH") {
      if (values.size() != 1 || !parse_positive(values[0], width)) {
        header_error("WIDTH must be a positive integer");
      }
    } else if (key == "HEIGHT") {
      if (values.size() != 1 || !parse_positive(values[0], height)) {
        header_error("HEIGHT must be a positive integer");
      }
    } else if (key == "VIEWPOINT") {
      double ignored = 0;
      if (values.size() != 7 ||
          !std::all_of(values.begin(), values.end(),
                       [&](std::string_view v) { return parse_double(v, ignored); })) {
        header_error("VIEWPOINT must hold 7 numbers");
      }
    } else if (key == "POINTS") {
      if (values.size() != 1 || !parse_positive(values[0], points)) {
        header_error("POINTS must be a positive integer");
      }
      if (width * height != points) header_error("WIDTH*HEIGHT != POINTS");
    } else if (key == "DATA") {
      if (values.size() != 1) header_error("DATA takes one value");
      if (values[0] != "ascii") {
        throw Error(Errc::UnsupportedEncoding,
                    "DATA " + std::string(values[0]) + " is not supported");
      }
    }
  }
  if (next_key < kHeaderKeys.size()) {
    header_error("missing header key " + std::string(kHeaderKeys[next_key]));
  }

  std::vector<std::string_view> body;
  for (; line_no < lines.size(); ++line_no) {
    if (!blank(lines[line_no])) body.push_back(lines[line_no]);
  }
  if (body.size() != points) {
    header_error("POINTS " + std::to_string(points) + " but body has " +
                 std::to_string(body.size()) + " lines");
  }

  PointCloud cloud;
  cloud.points.resize(points);
  if (with_normals) cloud.normals.resize(points);
  for (std::size_t row = 0; row < points; ++row) {
    const auto tokens = split_ws(body[row]);
    const auto r = static_cast<std::int64_t>(row);
    if (tokens.size() != field_count) {
      throw Error(Errc::MalformedBody,
                  "row " + std::to_string(row) + " has " +
                      std::to_string(tokens.size()) + " values, expected " +
                      std::to_string(field_count),
                  r);
    }
    std::array<double, 6> v{};
    for (std::size_t col = 0; col < field_count; ++col) {
      const auto c = static_cast<std::int64_t>(col);
      if (!parse_double(tokens[col], v[col])) {
        throw Error(Errc::MalformedBody,
                    "row " + std::to_string(row) + " column " + std::to_string(col) +
                        ": '" + std::string(tokens[col]) + "' is not a number",
                    r, c);
      }
      if (!std::isfinite(v[col])) {
        throw Error(Errc::NonFiniteValue,
                    "row " + std::to_string(row) + " column " + std::to_string(col) +
                        " is not finite",
                    r, c);
      }
    }
    cloud.points[row] = Vec3(v[0], v[1], v[2]);
    if (with_normals) {
      Vec3 n(v[3], v[4], v[5]);
      const double norm = n.norm();
      if (std::abs(norm - 1.0) > 1e-3) {
        throw Error(Errc::InvalidNormal,
                    "row " + std::to_string(row) + " normal has norm " +
                        std::to_string(norm),
                    r);
      }
      if (std::abs(norm - 1.0) > 1e-6) n /= norm;
      cloud.normals[row] = n;
    }
  }
  return cloud;
}

std::string write_pcd(const PointCloud& cloud) {
  cloud.validate();
  const bool normals = cloud.has_normals();
  const std::string n = std::to_string(cloud.size());
  std::string out;
  out.reserve(64 + cloud.size() * (normals ? 140 : 70));
  out += "# .PCD v0.7 - Point Cloud Data file format\n";
  out += "VERSION 0.7\n";
  if (normals) {
    out += "FIELDS x y z normal_x normal_y normal_z\n";
    out += "SIZE 8 8 8 8 8 8\nTYPE F F F F F F\nCOUNT 1 1 1 1 1 1\n";
  } else {
    out += "FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nCOUNT 1 1 1\n";
  }
  out += "WIDTH " + n + "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n";
  out += "POINTS " + n + "\nDATA ascii\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    append_double(out, p.x());
    out += ' ';
    append_double(out, p.y());
    out += ' ';
    append_double(out, p.z());
    if (normals) {
      const Vec3& nn = cloud.normals[i];
      for (int c = 0; c < 3; ++c) {
        out += ' ';
        append_double(out, nn[c]);
      }
    }
    out += '\n';
  }
  return out;
}

DatasetIndex load_manifest(std::string_view bytes) {
  if (bytes.starts_with("\xEF\xBB\xBF")) bytes.remove_prefix(3);
  const auto lines = split_lines(bytes);
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) throw Error(Errc::EmptyManifest, "manifest is empty");
  if (lines[first] != "path,label,object_id,view_id,source") {
    throw Error(Errc::MalformedRow,
                "manifest header must be 'path,label,object_id,view_id,source'", 0);
  }

  DatasetIndex index;
  std::unordered_set<std::string> seen;
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    if (line.empty()) continue;
    const auto row = static_cast<std::int64_t>(index.rows.size());
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 5 || fields[0].empty()) {
      throw Error(Errc::MalformedRow,
                  "manifest line " + std::to_string(i + 1) +
                      " must have 5 fields and a non-empty path",
                  row);
    }
    const auto label = label_from_token(fields[1]);
    if (!label) {
      throw Error(Errc::UnknownLabel,
                  "manifest line " + std::to_string(i + 1) + ": unknown label '" +
                      std::string(fields[1]) + "'",
                  row);
    }
    std::string path(fields[0]);
    if (!seen.insert(path).second) {
      throw Error(Errc::DuplicatePath, "duplicate manifest path '" + path + "'", row);
    }
    index.rows.push_back({std::move(path), *label, std::string(fields[2]),
                          std::string(fields[3]), std::string(fields[4])});
  }
  if (index.rows.empty()) throw Error(Errc::EmptyManifest, "manifest has no rows");
  return index;
}

std::string write_manifest(const DatasetIndex& index) {
  std::string out = "path,label,object_id,view_id,source\n";
  for (const auto& r : index.rows) {
    out += r.path;
    out += ',';
    out += label_token(r.label);
    out += ',' + r.object_id + ',' + r.view_id + ',' + r.source + '\n';
  }
  return out;
}

ClassCounts class_histogram(const DatasetIndex& index) {
  ClassCounts counts{};
  for (const auto& r : index.rows) ++counts[static_cast<std::size_t>(r.label)];
  return counts;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

PointCloud load_pcd_file(const std::filesystem::path& path) {
  return parse_pcd(read_file(path));
}

}  // namespace grasp
