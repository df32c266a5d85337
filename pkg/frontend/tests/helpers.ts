/** Shared fakes for exercising the client and controller without a network. */

export interface RecordedCall {
  url: string;
  path: string;
  method: string;
  body: unknown;
  signal: AbortSignal | null | undefined;
}

export function fakeResponse(text: string, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    text: () => Promise.resolve(text),
  } as unknown as Response;
}

/** A fetch stand-in that records calls and routes them through `route`,
 * which returns the raw response text (optionally via a promise so tests
 * can resolve replies out of order). */
export function makeFetch(
  route: (path: string, body: unknown, call: RecordedCall) => string | Promise<string>,
): { calls: RecordedCall[]; fetchFn: typeof fetch } {
  const calls: RecordedCall[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body =
      typeof init?.body === "string" ? JSON.parse(init.body) : undefined;
    const call: RecordedCall = {
      url,
      path,
      method: init?.method ?? "GET",
      body,
      signal: init?.signal,
    };
    calls.push(call);
    return fakeResponse(await route(path, body, call));
  }) as typeof fetch;
  return { calls, fetchFn };
}

export interface Deferred<T> {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (err: unknown) => void;
}

export function deferred<T>(): Deferred<T> {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** Drain pending microtasks so chained promise reactions settle. */
export async function flushMicrotasks(rounds = 12): Promise<void> {
  for (let i = 0; i < rounds; i++) await Promise.resolve();
}
