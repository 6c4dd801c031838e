#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace mslm {

// Flat array d-ary heap. Compare(a, b) == true means a is closer to the top,
// so the same template gives the max-heap over pair counts and the min-heap
// over token counts. The branching factor trades pop cost for push cost;
// frequency tables see far more pushes than pops, hence d = 4.
template <class T, class Compare, int D = 4>
class DaryHeap {
    static_assert(D >= 2);

public:
    DaryHeap() = default;
    explicit DaryHeap(Compare cmp) : cmp_(std::move(cmp)) {}

    bool empty() const { return items_.empty(); }
    std::size_t size() const { return items_.size(); }
    const T& top() const { return items_.front(); }

    void push(T item) {
        items_.push_back(std::move(item));
        sift_up(items_.size() - 1);
    }

    T pop() {
        T out = std::move(items_.front());
        items_.front() = std::move(items_.back());
        items_.pop_back();
        if (!items_.empty()) sift_down(0);
        return out;
    }

    void clear() { items_.clear(); }

private:
    void sift_up(std::size_t i) {
        while (i > 0) {
            std::size_t parent = (i - 1) / D;
            if (!cmp_(items_[i], items_[parent])) break;
            std::swap(items_[i], items_[parent]);
            i = parent;
        }
    }

    void sift_down(std::size_t i) {
        const std::size_t n = items_.size();
        for (;;) {
            std::size_t first = i * D + 1;
            if (first >= n) break;
            std::size_t last = first + D < n ? first + D : n;
            std::size_t best = first;
            for (std::size_t c = first + 1; c < last; ++c) {
                if (cmp_(items_[c], items_[best])) best = c;
            }
            if (!cmp_(items_[best], items_[i])) break;
            std::swap(items_[i], items_[best]);
            i = best;
        }
    }

    std::vector<T> items_;
    Compare cmp_;
};

}  // namespace mslm
