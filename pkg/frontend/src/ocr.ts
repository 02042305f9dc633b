// Layout helper for a chart's extracted values. The server serialises OCR
// output as "label: value" lines optionally followed by raw OCR text; this
// splits them back apart for tabular display. Purely presentational: the
// strings themselves pass through untouched.

export interface OcrView {
  rows: [string, string][];
  rawText: string;
}

export function parseValuesText(valuesText: string): OcrView {
  const rows: [string, string][] = [];
  const raw: string[] = [];
  for (const line of valuesText.split('\n')) {
    if (line.trim() === '') continue;
    const sep = line.indexOf(': ');
    if (sep > 0 && raw.length === 0) {
      rows.push([line.slice(0, sep), line.slice(sep + 2)]);
    } else {
      raw.push(line);
    }
  }
  return { rows, rawText: raw.join('\n') };
}
