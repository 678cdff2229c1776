"""Reference values for the closed-form numeric fixtures, at 30 digits."""
from mpmath import mp, mpf, exp, log, sqrt, tanh

mp.dps = 30


def softmax(xs):
    m = max(xs)
    e = [exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def entropy(p):
    return -sum(v * log(v) for v in p if v > 0)


print("softmax([1,2,3]) =", [mp.nstr(v, 12) for v in softmax([1, 2, 3])])

x = [mpf(1), mpf(2), mpf(3)]
mu = sum(x) / 3
var = sum((v - mu) ** 2 for v in x) / 3
print("layer_norm([1,2,3]) =", [mp.nstr((v - mu) / sqrt(var + mpf("1e-5")), 12) for v in x])

# self-refinement on d=2, S=[1,0], P=O=[0,0]
H = [entropy(softmax([mpf(1), mpf(0)])), entropy(softmax([0, 0])), entropy(softmax([0, 0]))]
print("H =", [mp.nstr(h, 12) for h in H], "alpha =", [mp.nstr(h / sum(H), 12) for h in H])

# cross-refinement on sims [0.9, 0.6, 0.3, 0.2]
s = [mpf("0.9"), mpf("0.6"), mpf("0.3"), mpf("0.2")]
p = [v / sum(s) for v in s]
t = [-v * log(v) for v in p]
print("p =", [mp.nstr(v, 12) for v in p], "theta =", [mp.nstr(v / sum(t), 12) for v in t])

print("1.1 ln2 =", mp.nstr(mpf("1.1") * log(2), 12), " ln2 =", mp.nstr(log(2), 12))
print("ln4 =", mp.nstr(log(4), 12), " ln2+ln4 =", mp.nstr(log(2) + log(4), 12))

lr, b1, b2, eps = mpf("7e-4"), mpf("0.9"), mpf("0.999"), mpf("1e-8")
m_hat = (1 - b1) * 1 / (1 - b1)
v_hat = (1 - b2) * 1 / (1 - b2)
print("adam first step =", mp.nstr(-lr * m_hat / (sqrt(v_hat) + eps), 15))
