#pragma once

// Latent codes and the registry that implements the sharing rules:
// one identity and one albedo code per subject, one expression code per
// (subject, expression) pair, one illumination code per lighting tag.

#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headfield/tensor.hpp"

namespace headfield {

struct LatentDims {
  int id = 100;
  int exp = 79;
  int alb = 100;
  int ill = 27;

  bool operator==(const LatentDims&) const = default;
};

enum class Attribute { id, exp, alb, ill };

inline const char* attribute_key(Attribute a) {
  switch (a) {
    case Attribute::id: return "z_id";
    case Attribute::exp: return "z_exp";
    case Attribute::alb: return "z_alb";
    case Attribute::ill: return "z_ill";
  }
  return "";
}

inline Attribute parse_attribute(const std::string& s) {
  if (s == "id" || s == "z_id") return Attribute::id;
  if (s == "exp" || s == "z_exp") return Attribute::exp;
  if (s == "alb" || s == "z_alb") return Attribute::alb;
  if (s == "ill" || s == "z_ill") return Attribute::ill;
  throw ParameterError("unknown attribute '" + s + "' (expected id, exp, alb or ill)");
}

template <class T>
struct LatentState {
  Tensor<T> z_id;
  Tensor<T> z_exp;
  Tensor<T> z_alb;
  Tensor<T> z_ill;

  static LatentState zeros(const LatentDims& dims, bool requires_grad = false) {
    return {Tensor<T>::zeros({dims.id}, requires_grad), Tensor<T>::zeros({dims.exp}, requires_grad),
            Tensor<T>::zeros({dims.alb}, requires_grad), Tensor<T>::zeros({dims.ill}, requires_grad)};
  }

  Tensor<T>& operator[](Attribute a) {
    switch (a) {
      case Attribute::id: return z_id;
      case Attribute::exp: return z_exp;
      case Attribute::alb: return z_alb;
      case Attribute::ill: return z_ill;
    }
    return z_id;
  }
  const Tensor<T>& operator[](Attribute a) const { return const_cast<LatentState&>(*this)[a]; }

  LatentDims dims() const {
    return {static_cast<int>(z_id.numel()), static_cast<int>(z_exp.numel()), static_cast<int>(z_alb.numel()),
            static_cast<int>(z_ill.numel())};
  }

  /// Deep copy whose codes are fresh leaves.
  LatentState clone(bool requires_grad = false) const {
    return {z_id.clone_leaf(requires_grad), z_exp.clone_leaf(requires_grad), z_alb.clone_leaf(requires_grad),
            z_ill.clone_leaf(requires_grad)};
  }
};

inline constexpr Attribute kAttributes[] = {Attribute::id, Attribute::exp, Attribute::alb, Attribute::ill};

template <class T>
void check_dims(const LatentState<T>& state, const LatentDims& dims) {
  const auto got = state.dims();
  auto check = [](const char* name, int have, int want) {
    if (have != want) {
      throw ParameterError(std::string(name) + " has dimension " + std::to_string(have) + ", expected " +
                           std::to_string(want));
    }
  };
  check("z_id", got.id, dims.id);
  check("z_exp", got.exp, dims.exp);
  check("z_alb", got.alb, dims.alb);
  check("z_ill", got.ill, dims.ill);
}

// ---------------------------------------------------------------------------
// Document form: {"z_id": [...], "z_exp": [...], "z_alb": [...], "z_ill": [...]}

template <class T>
nlohmann::json to_json(const LatentState<T>& state) {
  nlohmann::json doc;
  for (auto a : kAttributes) {
    const auto& v = state[a].values();
    doc[attribute_key(a)] = std::vector<double>(v.begin(), v.end());
  }
  return doc;
}

template <class T>
LatentState<T> latent_from_json(const nlohmann::json& doc) {
  LatentState<T> state;
  for (auto a : kAttributes) {
    const char* key = attribute_key(a);
    if (!doc.is_object() || !doc.contains(key) || !doc[key].is_array()) {
      throw ParameterError(std::string("latent document is missing array field '") + key + "'");
    }
    std::vector<T> values;
    for (const auto& v : doc[key]) {
      if (!v.is_number()) throw ParameterError(std::string("non-numeric entry in '") + key + "'");
      values.push_back(static_cast<T>(v.get<double>()));
    }
    if (values.empty()) throw ParameterError(std::string("empty latent field '") + key + "'");
    const auto n = static_cast<std::int64_t>(values.size());
    state[a] = Tensor<T>::from({n}, std::move(values));
  }
  return state;
}

// ---------------------------------------------------------------------------
// Editing operations.

/// Copies `a`, replacing `attribute` by (1-t) a + t b. t outside [0,1] is
/// rejected unless `allow_extrapolation` is set.
template <class T>
LatentState<T> interpolate(const LatentState<T>& a, const LatentState<T>& b, Attribute attribute, double t,
                           bool allow_extrapolation = false) {
  if (!allow_extrapolation && !(t >= 0.0 && t <= 1.0)) {
    throw ParameterError("interpolation parameter t=" + std::to_string(t) + " outside [0,1]");
  }
  if (a[attribute].numel() != b[attribute].numel()) {
    throw ParameterError(std::string("cannot interpolate ") + attribute_key(attribute) + " of different dimensions");
  }
  LatentState<T> out = a.clone();
  const auto& av = a[attribute].values();
  const auto& bv = b[attribute].values();
  auto dst = out[attribute].mutable_data();
  const T tt = static_cast<T>(t);
  for (std::size_t i = 0; i < av.size(); ++i) dst[i] = (T(1) - tt) * av[i] + tt * bv[i];
  return out;
}

/// k-th output = target with z_exp taken from source_seq[k].
template <class T>
std::vector<LatentState<T>> transfer_expression(const LatentState<T>& target, const std::vector<LatentState<T>>& source_seq) {
  std::vector<LatentState<T>> out;
  out.reserve(source_seq.size());
  for (const auto& src : source_seq) {
    if (src.z_exp.numel() != target.z_exp.numel()) {
      throw ParameterError("z_exp dimension mismatch in expression transfer: " + std::to_string(src.z_exp.numel()) +
                           " vs " + std::to_string(target.z_exp.numel()));
    }
    LatentState<T> s = target.clone();
    s.z_exp = src.z_exp.clone_leaf(false);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Registry.

struct FrameKey {
  std::string subject;
  std::string expression;
  std::string lighting;
};

struct LatentInit {
  enum class Source { seeded_gaussian, file } source = Source::seeded_gaussian;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  // For Source::file: document {"id": {subject: [...]}, "exp": {"subject/expr": [...]},
  // "alb": {subject: [...]}, "ill": {lighting: [...]}}
  nlohmann::json document;
};

template <class T>
class LatentRegistry {
 public:
  struct Entry {
    Tensor<T> code;          // learnable leaf
    std::vector<T> initial;  // frozen z*0
  };
  using Table = std::map<std::string, Entry>;

  LatentRegistry() = default;

  static std::string expression_key(const std::string& subject, const std::string& expression) {
    return subject + "/" + expression;
  }

  /// One code per sharing key; keys are visited in sorted order so seeded
  /// initialisation does not depend on manifest order.
  static LatentRegistry create(const std::vector<FrameKey>& frames, const LatentDims& dims, const LatentInit& init) {
    LatentRegistry reg;
    reg.dims_ = dims;
    std::map<std::string, int> id_keys, exp_keys, alb_keys, ill_keys;
    for (const auto& f : frames) {
      if (f.subject.empty() || f.expression.empty() || f.lighting.empty()) {
        throw ManifestError("frame is missing a subject, expression or lighting tag");
      }
      id_keys[f.subject];
      alb_keys[f.subject];
      exp_keys[expression_key(f.subject, f.expression)];
      ill_keys[f.lighting];
    }
    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto make = [&](const char* group, const std::string& key, int dim) {
      std::vector<T> values(static_cast<std::size_t>(dim));
      if (init.source == LatentInit::Source::seeded_gaussian) {
        for (auto& v : values) v = static_cast<T>(init.sigma * normal(rng));
      } else {
        const auto& doc = init.document;
        if (!doc.contains(group) || !doc[group].contains(key)) {
          throw ManifestError(std::string("initial code file has no entry ") + group + "[" + key + "]");
        }
        const auto& arr = doc[group][key];
        if (!arr.is_array() || static_cast<int>(arr.size()) != dim) {
          throw ManifestError(std::string("initial code ") + group + "[" + key + "] has dimension " +
                              std::to_string(arr.is_array() ? arr.size() : 0) + ", expected " + std::to_string(dim));
        }
        for (int i = 0; i < dim; ++i) values[i] = static_cast<T>(arr[i].get<double>());
      }
      return Entry{Tensor<T>::from({dim}, values, true), values};
    };
    for (const auto& [k, _] : id_keys) reg.id_[k] = make("id", k, dims.id);
    for (const auto& [k, _] : exp_keys) reg.exp_[k] = make("exp", k, dims.exp);
    for (const auto& [k, _] : alb_keys) reg.alb_[k] = make("alb", k, dims.alb);
    for (const auto& [k, _] : ill_keys) reg.ill_[k] = make("ill", k, dims.ill);
    return reg;
  }

  /// Codes for one frame. The returned tensors share storage with the registry.
  LatentState<T> state_for(const FrameKey& key) const {
    return {lookup(id_, key.subject, "identity").code, lookup(exp_, expression_key(key.subject, key.expression), "expression").code,
            lookup(alb_, key.subject, "albedo").code, lookup(ill_, key.lighting, "illumination").code};
  }

  /// Frozen initial codes z*0 for one frame.
  LatentState<T> initial_for(const FrameKey& key) const {
    auto leaf = [](const Entry& e) {
      return Tensor<T>::from({static_cast<std::int64_t>(e.initial.size())}, e.initial);
    };
    return {leaf(lookup(id_, key.subject, "identity")), leaf(lookup(exp_, expression_key(key.subject, key.expression), "expression")),
            leaf(lookup(alb_, key.subject, "albedo")), leaf(lookup(ill_, key.lighting, "illumination"))};
  }

  const Table& table(Attribute a) const {
    switch (a) {
      case Attribute::id: return id_;
      case Attribute::exp: return exp_;
      case Attribute::alb: return alb_;
      case Attribute::ill: return ill_;
    }
    return id_;
  }
  Table& table(Attribute a) { return const_cast<Table&>(std::as_const(*this).table(a)); }

  const LatentDims& dims() const { return dims_; }
  void set_dims(const LatentDims& d) { dims_ = d; }

  std::size_t count(Attribute a) const { return table(a).size(); }

  /// Every learnable code with a stable name "latent.<attr>.<key>".
  std::vector<std::pair<std::string, Tensor<T>>> named_codes() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (auto a : kAttributes)
      for (const auto& [k, e] : table(a)) out.emplace_back(std::string("latent.") + attribute_key(a) + "." + k, e.code);
    return out;
  }

 private:
  static const Entry& lookup(const Table& t, const std::string& key, const char* what) {
    auto it = t.find(key);
    if (it == t.end()) throw ManifestError(std::string("no ") + what + " code for key '" + key + "'");
    return it->second;
  }

  LatentDims dims_;
  Table id_, exp_, alb_, ill_;
};

}  // namespace headfield
