/** Word-level diff between the gold and transcribed final utterances.
 *
 * Tokens are compared under the same normalization the server applies
 * before metric computation (lowercase, hyphens to spaces, punctuation
 * stripped), so the highlight matches what the pipeline counts as a
 * difference. When normalization collapses a nonempty side to nothing the
 * word diff is meaningless and a character-level diff takes over.
 */

export interface DiffSpan {
  text: string;
  changed: boolean;
}

export interface DiffResult {
  gold: DiffSpan[];
  hyp: DiffSpan[];
  identical: boolean;
  granularity: "word" | "char";
}

export function normalizeToken(token: string): string {
  return token
    .toLowerCase()
    .replace(/[-‐-―]/g, " ")
    .replace(/[^\p{L}\p{N}\s]/gu, "")
    .trim();
}

function tokenize(text: string): string[] {
  return text.split(/\s+/).filter((t) => t.length > 0);
}

/** Positions of matched elements under a longest-common-subsequence
 * pairing of the two key arrays. */
function lcsMatch(a: string[], b: string[]): [Set<number>, Set<number>] {
  const n = a.length;
  const m = b.length;
  const table: number[][] = Array.from({ length: n + 1 }, () =>
    new Array<number>(m + 1).fill(0),
  );
  for (let i = 1; i <= n; i++) {
    for (let j = 1; j <= m; j++) {
      table[i][j] =
        a[i - 1] === b[j - 1]
          ? table[i - 1][j - 1] + 1
          : Math.max(table[i - 1][j], table[i][j - 1]);
    }
  }
  const matchedA = new Set<number>();
  const matchedB = new Set<number>();
  let i = n;
  let j = m;
  while (i > 0 && j > 0) {
    if (a[i - 1] === b[j - 1] && table[i][j] === table[i - 1][j - 1] + 1) {
      matchedA.add(i - 1);
      matchedB.add(j - 1);
      i--;
      j--;
    } else if (table[i - 1][j] >= table[i][j - 1]) {
      i--;
    } else {
      j--;
    }
  }
  return [matchedA, matchedB];
}

export function charDiff(gold: string, hyp: string): DiffResult {
  const a = Array.from(gold);
  const b = Array.from(hyp);
  const [matchedA, matchedB] = lcsMatch(a, b);
  return {
    gold: a.map((text, k) => ({ text, changed: !matchedA.has(k) })),
    hyp: b.map((text, k) => ({ text, changed: !matchedB.has(k) })),
    identical: gold === hyp,
    granularity: "char",
  };
}

export function wordDiff(gold: string, hyp: string): DiffResult {
  const goldTokens = tokenize(gold);
  const hypTokens = tokenize(hyp);
  const goldKeys = goldTokens.map(normalizeToken);
  const hypKeys = hypTokens.map(normalizeToken);
  const normalizationLost =
    (goldTokens.length > 0 && goldKeys.every((k) => k === "")) ||
    (hypTokens.length > 0 && hypKeys.every((k) => k === ""));
  if (normalizationLost) {
    return charDiff(gold, hyp);
  }
  const [matchedGold, matchedHyp] = lcsMatch(goldKeys, hypKeys);
  const goldSpans = goldTokens.map((text, k) => ({
    text,
    changed: !matchedGold.has(k),
  }));
  const hypSpans = hypTokens.map((text, k) => ({
    text,
    changed: !matchedHyp.has(k),
  }));
  return {
    gold: goldSpans,
    hyp: hypSpans,
    identical:
      goldSpans.every((s) => !s.changed) && hypSpans.every((s) => !s.changed),
    granularity: "word",
  };
}
