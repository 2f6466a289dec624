#pragma once

// Two-sided Student t tail probabilities frozen from scipy.stats.t.sf.

namespace wordlearn::testing {

struct TCase {
  double t, dof, p;
};

inline constexpr TCase kTTable[] = {
    {0.5, 1, 0.704832764699},     {1.0, 1, 0.5},                {2.0, 2, 0.183503419072},
    {-2.5, 3, 0.0877066470081},   {1.5, 4, 0.208},              {3.0, 5, 0.0300992478975},
    {-0.3, 6, 0.774299220918},    {2.1, 7, 0.0738711962129},    {4.0, 8, 0.00394977280345},
    {-1.8, 9, 0.105390671586},    {2.262, 9, 0.0500128455025},  {0.1, 10, 0.922320718564},
    {5.5, 12, 0.000136256149178}, {-3.2, 15, 0.00596384848553}, {1.96, 20, 0.0640782530036},
    {2.75, 25, 0.0109141246397},  {-0.9, 30, 0.375288286774},   {2.0, 50, 0.0509470687377},
    {1.0, 100, 0.319724155784},   {7.0, 19, 1.14715556365e-06},
};

}  // namespace wordlearn::testing
