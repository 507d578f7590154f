#pragma once

// Strict JSON field reader shared by the scenario and CLI config parsers.
// Errors name the key path and, when it can be located, the source line.

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "canalnav/vessel.hpp"
#include "json.hpp"

namespace canal
{

using json = nlohmann::ordered_json;

// Line of the key path inside the source text, 0 if not found.
inline int line_of(std::string_view text, const std::vector<std::string> &path)
{
    std::size_t pos = 0;
    bool any = false;
    for (const std::string &key : path)
    {
        if (key.empty() || key[0] == '[')
            continue;
        const std::size_t hit = text.find("\"" + key + "\"", pos);
        if (hit == std::string_view::npos)
            break;
        pos = hit;
        any = true;
    }
    if (!any)
        return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

template <class Error> class JsonReader
{
public:
    explicit JsonReader(std::string_view text) : text_(text) {}

    [[noreturn]] void fail(const std::vector<std::string> &path, const std::string &what) const
    {
        std::string where;
        for (const std::string &k : path)
            where += k[0] == '[' ? k : "/" + k;
        if (where.empty())
            where = "/";
        const int line = line_of(text_, path);
        throw Error(where + (line > 0 ? " (line " + std::to_string(line) + ")" : "") + ": " + what);
    }

    const json &object(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_object())
            fail(path, "expected an object");
        return j;
    }

    void allow_keys(const json &j, const std::vector<std::string> &path,
                    std::initializer_list<std::string_view> keys) const
    {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            {
                auto p = path;
                p.push_back(it.key());
                fail(p, "unknown key");
            }
    }

    double number(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_number())
            fail(path, "expected a number");
        return j.get<double>();
    }

    std::string string(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_string())
            fail(path, "expected a string");
        return j.get<std::string>();
    }

    int integer(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_number_integer())
            fail(path, "expected an integer");
        return j.get<int>();
    }

    Vec2 point(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
            fail(path, "expected [x, y]");
        return {j[0].get<double>(), j[1].get<double>()};
    }

    std::vector<Vec2> points(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_array())
            fail(path, "expected an array of [x, y]");
        std::vector<Vec2> out;
        for (std::size_t i = 0; i < j.size(); ++i)
        {
            auto p = path;
            p.push_back("[" + std::to_string(i) + "]");
            out.push_back(point(j[i], p));
        }
        return out;
    }

    template <int N> Eigen::Matrix<double, N, 1> vector(const json &j, const std::vector<std::string> &path) const
    {
        if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
            fail(path, "expected an array of " + std::to_string(N) + " numbers");
        Eigen::Matrix<double, N, 1> v;
        for (int i = 0; i < N; ++i)
        {
            if (!j[static_cast<std::size_t>(i)].is_number())
                fail(path, "expected numbers");
            v[i] = j[static_cast<std::size_t>(i)].get<double>();
        }
        return v;
    }

    // Reads an optional number field into `dst`.
    void opt(const json &j, const std::vector<std::string> &path, const char *key, double &dst) const
    {
        if (j.contains(key))
            dst = number(j[key], sub(path, key));
    }

    void opt(const json &j, const std::vector<std::string> &path, const char *key, int &dst) const
    {
        if (j.contains(key))
            dst = integer(j[key], sub(path, key));
    }

    static std::vector<std::string> sub(std::vector<std::string> path, const std::string &key)
    {
        path.push_back(key);
        return path;
    }

private:
    std::string_view text_;
};

} // namespace canal
