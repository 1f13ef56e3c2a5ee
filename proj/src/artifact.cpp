#include "adherence/artifact.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <openssl/evp.h>

#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "artifact payload assumes a little-endian host");

const nn::Parameter& Artifact::parameter(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return p;
  }
  throw SchemaError("artifact: no parameter named " + name);
}

std::string serialize_artifact(json manifest, const std::vector<const nn::Parameter*>& params) {
  json entries = json::array();
  size_t total = 0;
  for (const nn::Parameter* p : params) {
    entries.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    total += static_cast<size_t>(p->value.size());
  }
  manifest["parameters"] = std::move(entries);
  const std::string header = manifest.dump();

  std::string out = std::string(kArtifactMagic) + "\n" + std::to_string(header.size()) + "\n" + header;
  const size_t start = out.size();
  out.resize(start + total * sizeof(double));
  char* cursor = out.data() + start;
  for (const nn::Parameter* p : params) {
    const size_t bytes = static_cast<size_t>(p->value.size()) * sizeof(double);
    std::memcpy(cursor, p->value.data(), bytes);
    cursor += bytes;
  }
  return out;
}

Artifact deserialize_artifact(const std::string& bytes) {
  const std::string magic = std::string(kArtifactMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw SchemaError("artifact: bad magic line");
  const size_t nl = bytes.find('\n', magic.size());
  if (nl == std::string::npos) throw SchemaError("artifact: missing manifest length");
  size_t length = 0;
  try {
    length = std::stoul(bytes.substr(magic.size(), nl - magic.size()));
  } catch (const std::exception&) {
    throw SchemaError("artifact: bad manifest length");
  }
  if (nl + 1 + length > bytes.size()) throw SchemaError("artifact: truncated manifest");

  Artifact art;
  try {
    art.manifest = json::parse(bytes.substr(nl + 1, length));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("artifact: manifest is not JSON: ") + e.what());
  }
  if (!art.manifest.contains("parameters")) throw SchemaError("artifact: manifest has no parameter list");

  size_t offset = nl + 1 + length;
  for (const auto& entry : art.manifest.at("parameters")) {
    nn::Parameter p;
    p.name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    p.value.resize(rows, cols);
    const size_t n = static_cast<size_t>(rows * cols) * sizeof(double);
    if (offset + n > bytes.size()) throw SchemaError("artifact: payload truncated at " + p.name);
    std::memcpy(p.value.data(), bytes.data() + offset, n);
    offset += n;
    art.parameters.push_back(std::move(p));
  }
  if (offset != bytes.size()) throw SchemaError("artifact: trailing bytes after payload");
  return art;
}

void save_artifact(const std::filesystem::path& path, const json& manifest,
                   const std::vector<const nn::Parameter*>& params) {
  write_file(path, serialize_artifact(manifest, params));
}

Artifact load_artifact(const std::filesystem::path& path) { return deserialize_artifact(read_file(path)); }

void restore_parameters(const Artifact& artifact, const std::vector<nn::Parameter*>& params) {
  if (artifact.parameters.size() != params.size()) {
    throw SchemaError("artifact: expected " + std::to_string(params.size()) + " parameters, found " +
                      std::to_string(artifact.parameters.size()));
  }
  for (nn::Parameter* p : params) {
    const nn::Parameter& src = artifact.parameter(p->name);
    if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols()) {
      throw SchemaError("artifact: shape mismatch for " + p->name);
    }
    p->value = src.value;
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i))) {
      out.push_back(v(i));
    } else if (std::isinf(v(i))) {
      out.push_back(v(i) > 0 ? "inf" : "-inf");
    } else {
      throw NumericError("cannot serialize NaN");
    }
  }
  return out;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (j[i].is_string()) {
      const double inf = std::numeric_limits<double>::infinity();
      v(k) = j[i].get<std::string>() == "-inf" ? -inf : inf;
    } else {
      v(k) = j[i].get<double>();
    }
  }
  return v;
}

json to_json(const NormalizationStats& stats) {
  return {{"static_mean", to_json(stats.static_mean)},
          {"static_std", to_json(stats.static_std)},
          {"score_mean", to_json(stats.score_mean)},
          {"score_std", to_json(stats.score_std)},
          {"epsilon", stats.epsilon}};
}

NormalizationStats stats_from_json(const json& j) {
  NormalizationStats s;
  s.static_mean = vector_from_json(j.at("static_mean"));
  s.static_std = vector_from_json(j.at("static_std"));
  s.score_mean = vector_from_json(j.at("score_mean"));
  s.score_std = vector_from_json(j.at("score_std"));
  s.epsilon = j.at("epsilon").get<double>();
  return s;
}

json to_json(const CohortSchema& schema) {
  return {{"static_names", schema.static_names},
          {"score_names", schema.score_names},
          {"score_lower", to_json(schema.score_lower)},
          {"score_upper", to_json(schema.score_upper)}};
}

CohortSchema schema_from_json(const json& j) {
  CohortSchema s;
  s.static_names = j.at("static_names").get<std::vector<std::string>>();
  s.score_names = j.at("score_names").get<std::vector<std::string>>();
  s.score_lower = vector_from_json(j.at("score_lower"));
  s.score_upper = vector_from_json(j.at("score_upper"));
  return s;
}

}  // namespace adherence
