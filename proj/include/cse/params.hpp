#pragma once

#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cse/common.hpp"

namespace cse {

// One trainable tensor plus its optimizer and EMA state. Owned by a
// ParamStore; modules hold raw pointers.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
  Mat ema;

  Eigen::Index size() const { return value.size(); }
};

class ParamStore {
 public:
  explicit ParamStore(unsigned long long seed = 1) : rng_(seed) {}

  Param& zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Param& ones(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  // Glorot-style uniform in +-sqrt(6/(rows+cols)).
  Param& glorot(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Param& normal(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                double stddev);

  Param* find(const std::string& name) const;
  const std::vector<Param*>& all() const { return order_; }
  std::size_t count() const { return order_.size(); }
  Eigen::Index total_size() const;

  void zero_grads();
  double grad_norm() const;
  // Scales all gradients so the global norm is at most max_norm.
  // Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

  void init_ema();                     // shadow <- value
  void ema_to_value_swap();            // swap shadow and live weights
  void ema_update(double decay);       // shadow <- decay*shadow + (1-decay)*value

  // Flat binary serialization of one field across all params, name-checked
  // on load.
  void save_values(std::ostream& os) const;
  void load_values(std::istream& is);
  void save_ema(std::ostream& os) const;
  void load_ema(std::istream& is);
  void save_optimizer(std::ostream& os) const;
  void load_optimizer(std::istream& is);

  std::mt19937_64& rng() { return rng_; }

 private:
  Param& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  void save_field(std::ostream& os, int field) const;
  void load_field(std::istream& is, int field);

  std::vector<std::unique_ptr<Param>> owned_;
  std::vector<Param*> order_;
  std::unordered_map<std::string, Param*> by_name_;
  std::mt19937_64 rng_;
};

// EMA update as a standalone rule: shadow <- decay*shadow + (1-decay)*params.
void ema_update(Mat& shadow, const Mat& params, double decay);

}  // namespace cse
