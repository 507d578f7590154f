#pragma once

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "canalnav/vessel.hpp"

namespace canal::csv
{

inline std::vector<std::string> split(const std::string &line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ','))
    {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    return out;
}

inline bool is_comment(const std::string &line)
{
    const auto b = line.find_first_not_of(" \t\r");
    return b != std::string::npos && line[b] == '#';
}

// Reads a header line that must equal `columns`, then rows of numbers. Lines
// starting with '#' are skipped and, if requested, collected into `comments`.
inline std::vector<std::vector<double>> read_numeric(std::istream &is, const std::vector<std::string> &columns,
                                                     const std::string &what,
                                                     std::vector<std::string> *comments = nullptr)
{
    std::string line;
    int lineno = 0;
    while (std::getline(is, line))
    {
        ++lineno;
        if (is_comment(line))
        {
            if (comments != nullptr)
                comments->push_back(line);
            continue;
        }
        if (line.find_first_not_of(" \t\r") != std::string::npos)
            break;
    }
    if (split(line) != columns)
    {
        std::string expected;
        for (const auto &c : columns)
            expected += (expected.empty() ? "" : ",") + c;
        throw ParseError(what + " CSV line " + std::to_string(lineno) + ": expected header '" + expected + "'");
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line))
    {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        if (is_comment(line))
        {
            if (comments != nullptr)
                comments->push_back(line);
            continue;
        }
        const auto fields = split(line);
        if (fields.size() != columns.size())
            throw ParseError(what + " CSV line " + std::to_string(lineno) + ": expected " +
                             std::to_string(columns.size()) + " fields, got " + std::to_string(fields.size()));
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto &f : fields)
        {
            std::size_t pos = 0;
            double v = 0.0;
            try
            {
                v = std::stod(f, &pos);
            }
            catch (const std::exception &)
            {
                pos = 0;
            }
            if (pos != f.size() || f.empty())
                throw ParseError(what + " CSV line " + std::to_string(lineno) + ": bad number '" + f + "'");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace canal::csv
