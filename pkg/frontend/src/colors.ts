/** Class color mapping: class 1 cyan (class of interest), class 2 orange. */

const DEFAULTS = ["#00bcd4", "#ff9800", "#8bc34a", "#e91e63", "#9c27b0", "#3f51b5"];

const overrides = new Map<number, string>();

export function classColor(label: number | null | undefined): string {
  if (label == null) return "#9e9e9e";
  const set = overrides.get(label);
  if (set) return set;
  return DEFAULTS[(label - 1) % DEFAULTS.length];
}

export function remapClassColor(label: number, color: string): void {
  overrides.set(label, color);
}
