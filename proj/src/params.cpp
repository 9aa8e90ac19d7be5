#include "cse/params.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

namespace cse {

namespace {
enum Field { kValue = 0, kEma = 1, kAdamM = 2, kAdamV = 3 };

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("params: truncated stream");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("params: truncated stream");
  return s;
}

void write_mat(std::ostream& os, const Mat& m) {
  write_u64(os, static_cast<std::uint64_t>(m.rows()));
  write_u64(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Mat read_mat(std::istream& is) {
  auto rows = static_cast<Eigen::Index>(read_u64(is));
  auto cols = static_cast<Eigen::Index>(read_u64(is));
  Mat m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw DataError("params: truncated stream");
  return m;
}
}  // namespace

Param& ParamStore::create(const std::string& name, Eigen::Index rows,
                          Eigen::Index cols) {
  if (by_name_.count(name))
    throw std::logic_error("ParamStore: duplicate parameter " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  Param* raw = p.get();
  owned_.push_back(std::move(p));
  order_.push_back(raw);
  by_name_[name] = raw;
  return *raw;
}

Param& ParamStore::zeros(const std::string& name, Eigen::Index rows,
                         Eigen::Index cols) {
  return create(name, rows, cols);
}

Param& ParamStore::ones(const std::string& name, Eigen::Index rows,
                        Eigen::Index cols) {
  Param& p = create(name, rows, cols);
  p.value.setOnes();
  return p;
}

Param& ParamStore::glorot(const std::string& name, Eigen::Index rows,
                          Eigen::Index cols) {
  Param& p = create(name, rows, cols);
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = dist(rng_);
  return p;
}

Param& ParamStore::normal(const std::string& name, Eigen::Index rows,
                          Eigen::Index cols, double stddev) {
  Param& p = create(name, rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = dist(rng_);
  return p;
}

Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Eigen::Index ParamStore::total_size() const {
  Eigen::Index n = 0;
  for (const Param* p : order_) n += p->size();
  return n;
}

void ParamStore::zero_grads() {
  for (Param* p : order_) p->grad.setZero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const Param* p : order_) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double ParamStore::clip_grad_norm(double max_norm) {
  double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Param* p : order_) p->grad *= s;
  }
  return norm;
}

void ParamStore::init_ema() {
  for (Param* p : order_) p->ema = p->value;
}

void ParamStore::ema_to_value_swap() {
  for (Param* p : order_) {
    if (p->ema.size() == 0)
      throw std::logic_error("ParamStore: EMA state not initialized");
    p->value.swap(p->ema);
  }
}

void ParamStore::ema_update(double decay) {
  for (Param* p : order_) {
    if (p->ema.size() == 0) p->ema = p->value;
    cse::ema_update(p->ema, p->value, decay);
  }
}

void ParamStore::save_field(std::ostream& os, int field) const {
  write_u64(os, 0x63736570u);  // magic
  write_u64(os, static_cast<std::uint64_t>(field));
  write_u64(os, order_.size());
  for (const Param* p : order_) {
    write_string(os, p->name);
    switch (field) {
      case kValue: write_mat(os, p->value); break;
      case kEma: write_mat(os, p->ema.size() ? p->ema : p->value); break;
      case kAdamM:
        write_mat(os, p->adam_m.size()
                          ? p->adam_m
                          : Mat::Zero(p->value.rows(), p->value.cols()));
        break;
      case kAdamV:
        write_mat(os, p->adam_v.size()
                          ? p->adam_v
                          : Mat::Zero(p->value.rows(), p->value.cols()));
        break;
    }
  }
}

void ParamStore::load_field(std::istream& is, int field) {
  if (read_u64(is) != 0x63736570u) throw DataError("params: bad magic");
  if (read_u64(is) != static_cast<std::uint64_t>(field))
    throw DataError("params: wrong field tag");
  std::uint64_t n = read_u64(is);
  if (n != order_.size())
    throw DataError("params: parameter count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    Mat m = read_mat(is);
    Param* p = find(name);
    if (!p) throw DataError("params: unknown parameter " + name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw DataError("params: shape mismatch for " + name);
    switch (field) {
      case kValue: p->value = std::move(m); break;
      case kEma: p->ema = std::move(m); break;
      case kAdamM: p->adam_m = std::move(m); break;
      case kAdamV: p->adam_v = std::move(m); break;
    }
  }
}

void ParamStore::save_values(std::ostream& os) const { save_field(os, kValue); }
void ParamStore::load_values(std::istream& is) { load_field(is, kValue); }
void ParamStore::save_ema(std::ostream& os) const { save_field(os, kEma); }
void ParamStore::load_ema(std::istream& is) { load_field(is, kEma); }

void ParamStore::save_optimizer(std::ostream& os) const {
  save_field(os, kAdamM);
  save_field(os, kAdamV);
}

void ParamStore::load_optimizer(std::istream& is) {
  load_field(is, kAdamM);
  load_field(is, kAdamV);
}

void ema_update(Mat& shadow, const Mat& params, double decay) {
  shadow = decay * shadow + (1.0 - decay) * params;
}

}  // namespace cse
