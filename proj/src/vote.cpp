#include "tcap/vote.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tcap/error.hpp"

namespace tcap::vote {

VoteMatrix VoteMatrix::from_rows(const std::vector<std::vector<int>>& rows) {
    const std::size_t h = rows.empty() ? 0 : rows.front().size();
    std::vector<profiler::HeadRef> heads(h);
    for (std::size_t j = 0; j < h; ++j) heads[j] = {0, static_cast<int>(j), 0.0};
    VoteMatrix m(rows.size(), std::move(heads));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != h) throw std::invalid_argument("VoteMatrix::from_rows: ragged rows");
        for (std::size_t j = 0; j < h; ++j) m.set(i, j, rows[i][j] != 0);
    }
    return m;
}

std::vector<std::uint8_t> head_votes(const gmm::Responsibilities& resp, std::span<const int> target, double tau) {
    std::vector<std::uint8_t> out(resp.rows(), 0);
    for (std::size_t i = 0; i < resp.rows(); ++i) {
        double mass = 0.0;
        for (int k : target) mass += resp(i, static_cast<std::size_t>(k));
        out[i] = mass > tau ? 1 : 0;
    }
    return out;
}

VoteMatrix cast_votes(std::span<const HeadEvidence> evidence, double tau) {
    if (evidence.empty()) return {};
    const std::size_t m = evidence.front().responsibilities->rows();
    std::vector<profiler::HeadRef> heads;
    for (const auto& e : evidence) {
        if (e.responsibilities->rows() != m) throw std::invalid_argument("cast_votes: heads disagree on sample count");
        heads.push_back(e.head);
    }
    VoteMatrix votes(m, std::move(heads));
    for (std::size_t j = 0; j < evidence.size(); ++j) {
        const auto col = head_votes(*evidence[j].responsibilities, evidence[j].target_group, tau);
        for (std::size_t i = 0; i < m; ++i) votes.set(i, j, col[i] != 0);
    }
    return votes;
}

DawidSkeneState dawid_skene_aggregate(const VoteMatrix& votes, const DawidSkeneConfig& cfg) {
    const std::size_t m = votes.samples();
    const std::size_t h = votes.num_heads();
    if (m == 0 || h == 0) throw std::invalid_argument("dawid_skene_aggregate: empty vote matrix");
    const double lambda = cfg.smoothing;

    DawidSkeneState st;
    st.confusion.resize(h);
    std::vector<double> p(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) s += votes(i, j);
        p[i] = s / static_cast<double>(h);
    }

    std::vector<double> next1(m);
    std::vector<double> next0(m);
    std::vector<double> post0(m);
    for (std::size_t i = 0; i < m; ++i) post0[i] = 1.0 - p[i];
    std::vector<double> logc(h * 4);

    for (int it = 1; it <= cfg.max_iters; ++it) {
        // M-step.
        double sum_p = 0.0;
        for (double v : p) sum_p += v;
        st.prior_poisoned = sum_p / static_cast<double>(m);
        st.prior_clean = 1.0 - st.prior_poisoned;
        for (std::size_t j = 0; j < h; ++j) {
            double n[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
            for (std::size_t i = 0; i < m; ++i) {
                const int v = votes(i, j);
                n[0][v] += post0[i];
                n[1][v] += p[i];
            }
            for (int c = 0; c < 2; ++c) {
                const double denom = n[c][0] + n[c][1] + 2.0 * lambda;
                for (int v = 0; v < 2; ++v) {
                    st.confusion[j].p[c][v] = denom > 0.0 ? (n[c][v] + lambda) / denom : 0.5;
                    logc[j * 4 + c * 2 + v] = std::log(st.confusion[j].p[c][v]);
                }
            }
        }

        // E-step.
        const double log_prior0 = std::log(st.prior_clean);
        const double log_prior1 = std::log(st.prior_poisoned);
        double ll = 0.0;
        double delta = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double l0 = log_prior0;
            double l1 = log_prior1;
            for (std::size_t j = 0; j < h; ++j) {
                const int v = votes(i, j);
                l0 += logc[j * 4 + v];
                l1 += logc[j * 4 + 2 + v];
            }
            const double top = std::max(l0, l1);
            const double e0 = std::exp(l0 - top);
            const double e1 = std::exp(l1 - top);
            const double z = e0 + e1;
            ll += top + std::log(z);
            next0[i] = e0 / z;
            next1[i] = e1 / z;
            delta = std::max(delta, std::abs(next1[i] - p[i]));
        }
        double penalty = 0.0;
        if (lambda > 0.0) {
            for (double lc : logc) penalty += lambda * lc;
        }
        st.log_likelihood_trace.push_back(ll);
        st.objective_trace.push_back(ll + penalty);

        p.swap(next1);
        post0.swap(next0);
        st.iterations = it;
        if (delta < cfg.tol) {
            st.converged = true;
            break;
        }
    }

    bool swap = false;
    if (cfg.anchor_minority) {
        if (st.prior_poisoned > st.prior_clean) {
            swap = true;
        } else if (st.prior_poisoned == st.prior_clean) {
            double yes0 = 0.0;
            double yes1 = 0.0;
            for (const auto& c : st.confusion) {
                yes0 += c.p[0][1];
                yes1 += c.p[1][1];
            }
            swap = yes0 > yes1;
        }
    }
    if (swap) {
        std::swap(st.prior_clean, st.prior_poisoned);
        for (auto& c : st.confusion) {
            std::swap(c.p[0][0], c.p[1][0]);
            std::swap(c.p[0][1], c.p[1][1]);
        }
        p.swap(post0);
        st.swapped = true;
    }
    st.posterior = std::move(p);
    return st;
}

FilterResult filter_dataset(std::span<const double> posteriors, std::span<const std::string> ids) {
    if (posteriors.size() != ids.size()) throw std::invalid_argument("filter_dataset: size mismatch");
    FilterResult r;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!(posteriors[i] > kFlagThreshold)) r.kept.push_back(ids[i]);
    }
    r.all_flagged = r.kept.empty() && !ids.empty();
    return r;
}

DetectionMetrics evaluate_detection(std::span<const std::string> ids, std::span<const std::uint8_t> flagged,
                                    const store::LabelMap& labels) {
    if (ids.size() != flagged.size()) throw std::invalid_argument("evaluate_detection: size mismatch");
    DetectionMetrics out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto it = labels.find(ids[i]);
        if (it == labels.end()) throw LabelMismatch("no label for sample_id '" + ids[i] + "'");
        const bool truth = it->second;
        const bool flag = flagged[i] != 0;
        if (flag && truth) ++out.tp;
        else if (flag) ++out.fp;
        else if (truth) ++out.fn;
        else ++out.tn;
    }
    if (labels.size() != ids.size()) {
        out.warnings.push_back(std::to_string(labels.size() - ids.size()) + " labels refer to samples not in the report");
    }
    if (out.tp + out.fp == 0) {
        out.warnings.push_back("no sample flagged; precision defined as 0");
    } else {
        out.precision = 100.0 * static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fp);
    }
    if (out.tp + out.fn == 0) {
        out.warnings.push_back("no poisoned sample in labels; recall defined as 0");
    } else {
        out.recall = 100.0 * static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fn);
    }
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    } else if (out.tp + out.fp != 0 && out.tp + out.fn != 0) {
        out.warnings.push_back("precision and recall are both 0; F1 defined as 0");
    }
    return out;
}

}  // namespace tcap::vote
