#include "tellme/attention_prefill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tellme/error.hpp"

namespace tellme {

namespace {

std::int32_t dot_i8(const std::int8_t* a, const std::int8_t* b, std::size_t n) {
  std::int32_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::int32_t{a[i]} * b[i];
  return s;
}

void dequant_heads(const QuantTensor& t, std::size_t token, std::span<double> out) {
  const auto row = t.row(token);
  const double scale = t.scale(token);
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] * scale;
}

}  // namespace

void fold_score(double& running_max, double& denom, std::span<double> acc, std::size_t steps, double score,
                std::span<const double> value) {
  require(std::isfinite(score), ErrorCode::kNumeric, "non-finite attention score");
  require(acc.size() == value.size(), ErrorCode::kShape, "value length != accumulator length");
  if (steps == 0) {
    running_max = score;
    denom = 1.0;
    std::copy(value.begin(), value.end(), acc.begin());
    return;
  }
  const double new_max = std::max(running_max, score);
  const double rescale = std::exp(running_max - new_max);
  const double weight = std::exp(score - new_max);
  denom = denom * rescale + weight;
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = acc[i] * rescale + weight * value[i];
  running_max = new_max;
}

void online_step(FusionState& state, double score, std::span<const double> value) {
  fold_score(state.running_max, state.denom, state.acc, state.steps, score, value);
  ++state.steps;
}

std::vector<double> finalize(const FusionState& state) {
  require(state.steps > 0, ErrorCode::kEmptyStream, "finalize before any key was processed");
  std::vector<double> out(state.acc.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = state.acc[i] / state.denom;
  return out;
}

void PrefillBatch::validate() const {
  require(tokens >= 1, ErrorCode::kShape, "prefill needs at least one token");
  require(heads >= 1 && head_dim >= 1, ErrorCode::kShape, "heads and head_dim must be >= 1");
  require(parallelism >= 1, ErrorCode::kConfig, "parallelism must be >= 1");
  require(std::isfinite(softmax_scale), ErrorCode::kNumeric, "softmax scale must be finite");
  for (const QuantTensor* t : {&q, &k, &v}) {
    require(t->rows == tokens && t->cols == heads * head_dim, ErrorCode::kShape,
            "q/k/v must be tokens x heads*head_dim");
    t->validate();
  }
}

double attention_score(const PrefillBatch& b, std::size_t head, std::size_t qi, std::size_t kj) {
  const std::size_t off = head * b.head_dim;
  const std::int32_t dot = dot_i8(b.q.row(qi).data() + off, b.k.row(kj).data() + off, b.head_dim);
  return static_cast<double>(dot) * b.q.scale(qi) * b.k.scale(kj) * b.softmax_scale;
}

AttentionResult reverse_prefill_attention(const PrefillBatch& batch) {
  batch.validate();
  const std::size_t n = batch.tokens;
  const std::size_t h = batch.heads;
  const std::size_t d = batch.head_dim;
  const std::size_t p = batch.parallelism;
  const std::size_t width = h * d;

  AttentionResult result;
  result.out.assign(n * width, 0.0f);

  // On-chip buffers: p query slots, one k block, one v block, and per
  // (head, slot) s / m / l scalars plus the output accumulators.
  std::vector<std::int8_t> q_slots(p * width);
  std::vector<float> q_scales(p);
  std::vector<std::size_t> q_token(p);
  std::vector<std::int8_t> k_block(width);
  std::vector<double> v_block(width);
  std::vector<double> s_buf(h * p), m_buf(h * p), l_buf(h * p);
  std::vector<double> o_buf(h * p * d);
  std::vector<std::size_t> steps(h * p);

  auto& res = result.residency;
  res.query_slots = p;
  res.key_blocks = 1;
  res.value_blocks = 1;
  res.score_scalars = s_buf.size();
  res.max_scalars = m_buf.size();
  res.denom_scalars = l_buf.size();

  auto& trace = result.trace;
  std::uint32_t batch_id = 0;
  for (std::size_t hi = n; hi > 0; hi = hi > p ? hi - p : 0, ++batch_id) {
    const std::size_t lo = hi > p ? hi - p : 0;
    const std::size_t live = hi - lo;
    res.peak_live_queries = std::max(res.peak_live_queries, live);

    // Fill slots from the highest query index downward.
    for (std::size_t r = 0; r < live; ++r) {
      const std::size_t qi = hi - 1 - r;
      const auto row = batch.q.row(qi);
      std::copy(row.begin(), row.end(), q_slots.begin() + static_cast<std::ptrdiff_t>(r * width));
      q_scales[r] = batch.q.scale(qi);
      q_token[r] = qi;
      trace.events.push_back({LoadKind::kQuery, static_cast<std::uint32_t>(qi), batch_id});
    }
    std::fill(steps.begin(), steps.end(), std::size_t{0});

    for (std::size_t j = 0; j < hi; ++j) {
      trace.events.push_back({LoadKind::kKeyValue, static_cast<std::uint32_t>(j), batch_id});
      ++trace.iterations;
      const auto krow = batch.k.row(j);
      std::copy(krow.begin(), krow.end(), k_block.begin());
      dequant_heads(batch.v, j, v_block);
      const double k_scale = batch.k.scale(j);

      for (std::size_t r = 0; r < live; ++r) {
        if (j > q_token[r]) continue;  // causal mask: skipped, not computed
        ++trace.computed_cells;
        for (std::size_t hd = 0; hd < h; ++hd) {
          const std::size_t slot = hd * p + r;
          const std::int32_t dot = dot_i8(q_slots.data() + r * width + hd * d, k_block.data() + hd * d, d);
          s_buf[slot] = static_cast<double>(dot) * q_scales[r] * k_scale * batch.softmax_scale;
          fold_score(m_buf[slot], l_buf[slot], std::span<double>(o_buf.data() + slot * d, d), steps[slot],
                     s_buf[slot], std::span<const double>(v_block.data() + hd * d, d));
          ++steps[slot];
        }
      }
    }

    for (std::size_t r = 0; r < live; ++r) {
      const std::size_t qi = q_token[r];
      for (std::size_t hd = 0; hd < h; ++hd) {
        const std::size_t slot = hd * p + r;
        for (std::size_t i = 0; i < d; ++i)
          result.out[qi * width + hd * d + i] = static_cast<float>(o_buf[slot * d + i] / l_buf[slot]);
      }
    }
    // The kv tokens of this batch are dead for every remaining (lower) query.
    for (std::size_t r = 0; r < live; ++r)
      trace.events.push_back({LoadKind::kEvict, static_cast<std::uint32_t>(hi - 1 - r), batch_id});
  }
  return result;
}

std::vector<double> naive_causal_attention(const PrefillBatch& batch) {
  batch.validate();
  const std::size_t n = batch.tokens;
  const std::size_t d = batch.head_dim;
  const std::size_t width = batch.heads * d;
  std::vector<double> out(n * width, 0.0);
  std::vector<double> scores(n * n);
  for (std::size_t hd = 0; hd < batch.heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        scores[i * n + j] = j > i ? -std::numeric_limits<double>::infinity() : attention_score(batch, hd, i, j);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = scores.data() + i * n;
      const double mx = *std::max_element(row, row + n);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double pj = row[j] / sum;
        if (pj == 0.0) continue;
        const auto vrow = batch.v.row(j);
        const double vs = batch.v.scale(j);
        for (std::size_t e = 0; e < d; ++e) out[i * width + hd * d + e] += pj * vrow[hd * d + e] * vs;
      }
    }
  }
  return out;
}

AttentionResult dense_schedule_attention(const PrefillBatch& batch) {
  batch.validate();
  const std::size_t n = batch.tokens;
  const std::size_t h = batch.heads;
  const std::size_t d = batch.head_dim;
  const std::size_t p = batch.parallelism;
  const std::size_t width = h * d;
  const std::size_t batches = (n + p - 1) / p;
  const std::size_t stream = batches * n;  // every batch streams all N keys

  AttentionResult result;
  result.out.assign(n * width, 0.0f);
  result.residency.query_slots = p;
  result.residency.key_blocks = 1;
  result.residency.value_blocks = 1;

  std::vector<double> m_buf(h * p), l_buf(h * p), o_buf(h * p * d);
  std::vector<std::size_t> steps(h * p);
  std::vector<double> v_tmp(width);
  auto& trace = result.trace;

  // Slot r lags the key stream by r iterations (diagonal wavefront), so the
  // pipeline needs p - 1 extra iterations to drain.
  trace.iterations = stream + p - 1;
  for (std::size_t t = 0; t < trace.iterations; ++t) {
    if (t < stream)
      trace.events.push_back({LoadKind::kKeyValue, static_cast<std::uint32_t>(t % n),
                              static_cast<std::uint32_t>(t / n)});
    for (std::size_t r = 0; r < p && r <= t; ++r) {
      const std::size_t s = t - r;
      if (s >= stream) continue;
      const std::size_t b = s / n;
      const std::size_t j = s % n;
      const std::size_t qi = b * p + r;
      if (qi >= n) continue;  // short final batch leaves this slot idle
      if (j == 0) {
        trace.events.push_back({LoadKind::kQuery, static_cast<std::uint32_t>(qi), static_cast<std::uint32_t>(b)});
        for (std::size_t hd = 0; hd < h; ++hd) steps[hd * p + r] = 0;
      }
      ++trace.computed_cells;
      const bool masked = j > qi;
      if (masked) ++trace.masked_cells;
      dequant_heads(batch.v, j, v_tmp);
      for (std::size_t hd = 0; hd < h; ++hd) {
        const double score = attention_score(batch, hd, qi, j);
        if (masked) continue;  // computed, then discarded
        const std::size_t slot = hd * p + r;
        fold_score(m_buf[slot], l_buf[slot], std::span<double>(o_buf.data() + slot * d, d), steps[slot], score,
                   std::span<const double>(v_tmp.data() + hd * d, d));
        ++steps[slot];
      }
      if (j == n - 1) {
        for (std::size_t hd = 0; hd < h; ++hd) {
          const std::size_t slot = hd * p + r;
          for (std::size_t e = 0; e < d; ++e)
            result.out[qi * width + hd * d + e] = static_cast<float>(o_buf[slot * d + e] / l_buf[slot]);
        }
      }
    }
  }
  return result;
}

}  // namespace tellme
