#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include "mslm/dheap.hpp"

using mslm::DaryHeap;

TEST_CASE("max-heap pops in descending order", "[heap]") {
    struct Above {
        bool operator()(int a, int b) const { return a > b; }
    };
    DaryHeap<int, Above> heap;
    std::mt19937 gen(7);
    std::vector<int> values(500);
    for (auto& v : values) v = static_cast<int>(gen() % 1000);
    for (int v : values) heap.push(v);
    std::sort(values.begin(), values.end(), std::greater<>());
    for (int v : values) {
        REQUIRE(heap.top() == v);
        heap.pop();
    }
    REQUIRE(heap.empty());
}

TEST_CASE("min-heap with tie-break pops stable order", "[heap]") {
    struct Entry {
        int count;
        int id;
    };
    struct Below {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.count != b.count) return a.count < b.count;
            return a.id < b.id;
        }
    };
    DaryHeap<Entry, Below> heap;
    heap.push({3, 9});
    heap.push({1, 5});
    heap.push({1, 2});
    heap.push({2, 7});
    heap.push({1, 8});
    std::vector<std::pair<int, int>> order;
    while (!heap.empty()) {
        order.emplace_back(heap.top().count, heap.top().id);
        heap.pop();
    }
    std::vector<std::pair<int, int>> want{{1, 2}, {1, 5}, {1, 8}, {2, 7}, {3, 9}};
    REQUIRE(order == want);
}

TEST_CASE("interleaved push and pop keep heap order", "[heap]") {
    struct Above {
        bool operator()(int a, int b) const { return a > b; }
    };
    DaryHeap<int, Above> heap;
    std::mt19937 gen(13);
    std::vector<int> mirror;
    for (int step = 0; step < 2000; ++step) {
        if (mirror.empty() || gen() % 3 != 0) {
            int v = static_cast<int>(gen() % 100);
            heap.push(v);
            mirror.push_back(v);
            std::push_heap(mirror.begin(), mirror.end());
        } else {
            REQUIRE(heap.top() == mirror.front());
            heap.pop();
            std::pop_heap(mirror.begin(), mirror.end());
            mirror.pop_back();
        }
        REQUIRE(heap.size() == mirror.size());
    }
}
